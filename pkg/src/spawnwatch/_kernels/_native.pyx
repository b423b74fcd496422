# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; semantics match fallback.py exactly."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def step_actions(
    cnp.ndarray[cnp.int8_t, ndim=1] stage,
    cnp.ndarray[cnp.uint8_t, ndim=1, cast=True] fertilized,
    cnp.ndarray[cnp.float64_t, ndim=1] exit_time,
    double now,
    int advance_below,
    int removal_code,
):
    cdef Py_ssize_t n = stage.shape[0]
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] actions = np.zeros(n, dtype=np.uint8)
    cdef Py_ssize_t i
    cdef int s
    for i in range(n):
        if exit_time[i] <= now:
            s = stage[i]
            if s == removal_code:
                actions[i] = 2
            elif fertilized[i] and s < advance_below:
                actions[i] = 1
    return actions


def greedy_match(
    cnp.ndarray[cnp.float64_t, ndim=2] iou,
    cnp.ndarray[cnp.int64_t, ndim=1] det_order,
    cnp.ndarray[cnp.int64_t, ndim=1] det_labels,
    cnp.ndarray[cnp.int64_t, ndim=1] truth_labels,
    double iou_threshold,
):
    cdef Py_ssize_t n_det = iou.shape[0]
    cdef Py_ssize_t n_truth = iou.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] matched = np.full(n_det, -1, dtype=np.int64)
    if n_truth == 0:
        return matched
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] taken = np.zeros(n_truth, dtype=np.uint8)
    cdef Py_ssize_t k, d, t, best
    cdef double best_iou, v
    cdef long want
    for k in range(det_order.shape[0]):
        d = det_order[k]
        want = det_labels[d]
        best = -1
        best_iou = -1.0
        for t in range(n_truth):
            if taken[t] or truth_labels[t] != want:
                continue
            v = iou[d, t]
            if v >= iou_threshold and v > best_iou:
                best = t
                best_iou = v
        if best >= 0:
            matched[d] = best
            taken[best] = 1
    return matched

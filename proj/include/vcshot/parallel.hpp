#pragma once

#include <cstddef>
#include <functional>

namespace vcshot {

// Number of workers used by parallel_for. Reads VC_THREADS on every call
// (so tests can change it), falling back to hardware_concurrency.
std::size_t worker_count();

// Calls body(i) for every i in [0, n). Each index is visited exactly once;
// body must only write to state owned by index i. Nested calls from inside a
// worker run serially on that worker.
//
// Results never depend on the worker count: callers perform any reduction
// afterwards, in index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace vcshot

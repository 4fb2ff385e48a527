#pragma once

#include <cstddef>
#include <functional>

namespace fcmesh {

/// Number of worker threads used by parallel_for. Initialised from the
/// FCMESH_THREADS environment variable (default 1).
std::size_t worker_count();
void set_worker_count(std::size_t n);

/// Runs body(i) for i in [0, n). Work is statically chunked and every index is
/// visited exactly once, so results written to per-index slots do not depend
/// on the worker count. The first exception thrown by any worker is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace fcmesh

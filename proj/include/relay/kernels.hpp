#pragma once

// Attention kernels used by the cached (incremental) inference path.
//
// Every kernel has a serial reference in `kernels::serial` and an OpenMP
// version in `kernels::omp`. Both evaluate each output row with the same
// per-row routine, so their results are bitwise identical; the serial copy
// exists for tests and the benchmark.

#include <cstddef>
#include <span>

#include "relay/tensor.hpp"

namespace relay::kernels {

enum class Exec { serial, parallel };

/// Rows below this count run serially even under Exec::parallel.
inline constexpr std::size_t kParallelMinRows = 16;

namespace serial {

/// out = x * w, with x (n x d) and w (d x d).
void project(const Matrix& x, const Matrix& w, Matrix& out);

/// Causal attention for `q.rows()` new rows against `k`/`v`. New row i sees
/// key rows [0, visible_base + i] inclusive.
void causal_attend(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t visible_base, Matrix& out);

/// Target-aware candidate attention: candidate i sees every context row of
/// `ctx_k`/`ctx_v` plus its own key/value row, never other candidates.
void candidate_attend(const Matrix& q, const Matrix& ctx_k, const Matrix& ctx_v, const Matrix& own_k,
                      const Matrix& own_v, Matrix& out);

/// out[i] = h.row(i) . head
void score(const Matrix& h, std::span<const double> head, std::span<double> out);

}  // namespace serial

namespace omp {

void project(const Matrix& x, const Matrix& w, Matrix& out);
void causal_attend(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t visible_base, Matrix& out);
void candidate_attend(const Matrix& q, const Matrix& ctx_k, const Matrix& ctx_v, const Matrix& own_k,
                      const Matrix& own_v, Matrix& out);
void score(const Matrix& h, std::span<const double> head, std::span<double> out);

}  // namespace omp

// Dispatchers.
void project(Exec exec, const Matrix& x, const Matrix& w, Matrix& out);
void causal_attend(Exec exec, const Matrix& q, const Matrix& k, const Matrix& v, std::size_t visible_base,
                   Matrix& out);
void candidate_attend(Exec exec, const Matrix& q, const Matrix& ctx_k, const Matrix& ctx_v, const Matrix& own_k,
                      const Matrix& own_v, Matrix& out);
void score(Exec exec, const Matrix& h, std::span<const double> head, std::span<double> out);

}  // namespace relay::kernels

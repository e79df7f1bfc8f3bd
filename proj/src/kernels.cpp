#include "relay/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace relay::kernels {
namespace {

void project_row(const Matrix& x, const Matrix& w, std::size_t r, Matrix& out) {
    const std::size_t d_in = x.cols();
    const std::size_t d_out = w.cols();
    auto dst = out.row(r);
    std::fill(dst.begin(), dst.end(), 0.0);
    const auto src = x.row(r);
    for (std::size_t k = 0; k < d_in; ++k) {
        const double a = src[k];
        const auto wk = w.row(k);
        for (std::size_t j = 0; j < d_out; ++j) {
            dst[j] += a * wk[j];
        }
    }
}

// Softmax-weighted sum over `count` rows of (k, v), optionally followed by
// one extra (own) key/value row. Max-subtracted for stability.
void attend_row(std::span<const double> q, const Matrix& k, const Matrix& v, std::size_t count,
                std::span<const double> extra_k, std::span<const double> extra_v, std::span<double> out,
                std::vector<double>& logits) {
    const std::size_t d = q.size();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const bool has_extra = !extra_k.empty();
    const std::size_t total = count + (has_extra ? 1 : 0);
    logits.resize(total);

    double mx = -INFINITY;
    for (std::size_t j = 0; j < count; ++j) {
        const auto kj = k.row(j);
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            dot += q[c] * kj[c];
        }
        logits[j] = dot * scale;
        mx = std::max(mx, logits[j]);
    }
    if (has_extra) {
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            dot += q[c] * extra_k[c];
        }
        logits[count] = dot * scale;
        mx = std::max(mx, logits[count]);
    }

    double denom = 0.0;
    for (std::size_t j = 0; j < total; ++j) {
        logits[j] = std::exp(logits[j] - mx);
        denom += logits[j];
    }

    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t j = 0; j < count; ++j) {
        const double p = logits[j] / denom;
        const auto vj = v.row(j);
        for (std::size_t c = 0; c < d; ++c) {
            out[c] += p * vj[c];
        }
    }
    if (has_extra) {
        const double p = logits[count] / denom;
        for (std::size_t c = 0; c < d; ++c) {
            out[c] += p * extra_v[c];
        }
    }
}

double dot_row(const Matrix& h, std::size_t r, std::span<const double> head) {
    const auto row = h.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) {
        acc += row[c] * head[c];
    }
    return acc;
}

}  // namespace

// ---------------------------------------------------------------------------
// Serial reference.

namespace serial {

void project(const Matrix& x, const Matrix& w, Matrix& out) {
    out = Matrix(x.rows(), w.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        project_row(x, w, r, out);
    }
}

void causal_attend(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t visible_base, Matrix& out) {
    out = Matrix(q.rows(), q.cols());
    std::vector<double> logits;
    for (std::size_t i = 0; i < q.rows(); ++i) {
        attend_row(q.row(i), k, v, visible_base + i + 1, {}, {}, out.row(i), logits);
    }
}

void candidate_attend(const Matrix& q, const Matrix& ctx_k, const Matrix& ctx_v, const Matrix& own_k,
                      const Matrix& own_v, Matrix& out) {
    out = Matrix(q.rows(), q.cols());
    std::vector<double> logits;
    for (std::size_t i = 0; i < q.rows(); ++i) {
        attend_row(q.row(i), ctx_k, ctx_v, ctx_k.rows(), own_k.row(i), own_v.row(i), out.row(i), logits);
    }
}

void score(const Matrix& h, std::span<const double> head, std::span<double> out) {
    for (std::size_t i = 0; i < h.rows(); ++i) {
        out[i] = dot_row(h, i, head);
    }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP: rows are independent, so each loop distributes rows across threads.

namespace omp {

void project(const Matrix& x, const Matrix& w, Matrix& out) {
    out = Matrix(x.rows(), w.cols());
    const auto n = static_cast<std::ptrdiff_t>(x.rows());
#pragma omp parallel for schedule(static) if (x.rows() >= kParallelMinRows)
    for (std::ptrdiff_t r = 0; r < n; ++r) {
        project_row(x, w, static_cast<std::size_t>(r), out);
    }
}

void causal_attend(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t visible_base, Matrix& out) {
    out = Matrix(q.rows(), q.cols());
    const auto n = static_cast<std::ptrdiff_t>(q.rows());
#pragma omp parallel if (q.rows() >= kParallelMinRows)
    {
        std::vector<double> logits;
        // Later rows see more keys; dynamic scheduling evens out the triangle.
#pragma omp for schedule(dynamic, 8)
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            const auto row = static_cast<std::size_t>(i);
            attend_row(q.row(row), k, v, visible_base + row + 1, {}, {}, out.row(row), logits);
        }
    }
}

void candidate_attend(const Matrix& q, const Matrix& ctx_k, const Matrix& ctx_v, const Matrix& own_k,
                      const Matrix& own_v, Matrix& out) {
    out = Matrix(q.rows(), q.cols());
    const auto n = static_cast<std::ptrdiff_t>(q.rows());
#pragma omp parallel if (q.rows() >= kParallelMinRows)
    {
        std::vector<double> logits;
#pragma omp for schedule(static)
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            const auto row = static_cast<std::size_t>(i);
            attend_row(q.row(row), ctx_k, ctx_v, ctx_k.rows(), own_k.row(row), own_v.row(row), out.row(row),
                       logits);
        }
    }
}

void score(const Matrix& h, std::span<const double> head, std::span<double> out) {
    const auto n = static_cast<std::ptrdiff_t>(h.rows());
#pragma omp parallel for schedule(static) if (h.rows() >= kParallelMinRows)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        out[static_cast<std::size_t>(i)] = dot_row(h, static_cast<std::size_t>(i), head);
    }
}

}  // namespace omp

// ---------------------------------------------------------------------------

void project(Exec exec, const Matrix& x, const Matrix& w, Matrix& out) {
    exec == Exec::parallel ? omp::project(x, w, out) : serial::project(x, w, out);
}

void causal_attend(Exec exec, const Matrix& q, const Matrix& k, const Matrix& v, std::size_t visible_base,
                   Matrix& out) {
    exec == Exec::parallel ? omp::causal_attend(q, k, v, visible_base, out)
                           : serial::causal_attend(q, k, v, visible_base, out);
}

void candidate_attend(Exec exec, const Matrix& q, const Matrix& ctx_k, const Matrix& ctx_v, const Matrix& own_k,
                      const Matrix& own_v, Matrix& out) {
    exec == Exec::parallel ? omp::candidate_attend(q, ctx_k, ctx_v, own_k, own_v, out)
                           : serial::candidate_attend(q, ctx_k, ctx_v, own_k, own_v, out);
}

void score(Exec exec, const Matrix& h, std::span<const double> head, std::span<double> out) {
    exec == Exec::parallel ? omp::score(h, head, out) : serial::score(h, head, out);
}

}  // namespace relay::kernels

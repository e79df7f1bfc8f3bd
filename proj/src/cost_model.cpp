#include "relay/cost_model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "relay/common.hpp"

namespace relay {

double CostModel::shape_scale(std::size_t layers, std::size_t dim) const noexcept {
    return (static_cast<double>(layers) / static_cast<double>(ref_layers)) *
           (static_cast<double>(dim) / static_cast<double>(ref_dim));
}

double CostModel::pre_ms(double n, std::size_t layers, std::size_t dim) const noexcept {
    return std::max(0.0, shape_scale(layers, dim) * (a2 * n * n + a1 * n + a0));
}

double CostModel::full_ms(double n_total, std::size_t layers, std::size_t dim) const noexcept {
    return pre_ms(n_total, layers, dim);
}

double CostModel::rank_ms(double suffix, double items, std::size_t layers, std::size_t dim) const noexcept {
    return shape_scale(layers, dim) * (b1 * (suffix + items) + b2 * suffix * suffix) + b0;
}

double CostModel::load_ms(std::uint64_t bytes, std::size_t sharers) const noexcept {
    const double share = reload_bandwidth / static_cast<double>(std::max<std::size_t>(sharers, 1));
    return static_cast<double>(bytes) / share * 1000.0 + load_fixed_ms;
}

double CostModel::local_access_ms(std::uint64_t bytes) const noexcept {
    return static_cast<double>(bytes) / hbm_bandwidth * 1000.0;
}

double CostModel::remote_fetch_ms(std::uint64_t bytes) const noexcept {
    return static_cast<double>(bytes) / remote_bandwidth * 1000.0 + remote_fixed_ms;
}

void CostModel::validate() const {
    if (a2 < 0 || a1 < 0 || a0 < 0 || b1 < 0 || b2 < 0 || b0 < 0 || load_fixed_ms < 0 || remote_fixed_ms < 0) {
        throw ConfigError("cost: coefficients must be nonnegative");
    }
    if (!(reload_bandwidth > 0) || !(hbm_bandwidth > 0) || !(remote_bandwidth > 0)) {
        throw ConfigError("cost: bandwidths must be positive");
    }
    if (ref_layers == 0 || ref_dim == 0) {
        throw ConfigError("cost: reference shape must be positive");
    }
    if (retrieval_min_ms < 0 || retrieval_max_ms < retrieval_min_ms || preproc_min_ms < 0 ||
        preproc_max_ms < preproc_min_ms || dispatch_min_ms < 0 || dispatch_max_ms < dispatch_min_ms) {
        throw ConfigError("cost: stage delay ranges must satisfy 0 <= min <= max");
    }
}

nlohmann::json CostModel::to_json() const {
    return {{"a2", a2},
            {"a1", a1},
            {"a0", a0},
            {"b1", b1},
            {"b2", b2},
            {"b0", b0},
            {"reload_bandwidth", reload_bandwidth},
            {"load_fixed_ms", load_fixed_ms},
            {"hbm_bandwidth", hbm_bandwidth},
            {"remote_bandwidth", remote_bandwidth},
            {"remote_fixed_ms", remote_fixed_ms},
            {"ref_layers", ref_layers},
            {"ref_dim", ref_dim},
            {"retrieval_ms", {retrieval_min_ms, retrieval_max_ms}},
            {"preproc_ms", {preproc_min_ms, preproc_max_ms}},
            {"dispatch_ms", {dispatch_min_ms, dispatch_max_ms}}};
}

std::vector<Anchor> default_pre_anchors() {
    return {{1024, 13.0}, {2048, 35.0}, {4096, 110.0}};
}

CostModel calibrate(const std::vector<Anchor>& pre_anchors, CostModel base) {
    std::set<double> distinct;
    for (const auto& a : pre_anchors) {
        distinct.insert(a.x);
    }
    if (distinct.size() < 3) {
        throw ConfigError("calibrate: need at least three distinct pre-inference anchors");
    }

    // Normal equations in kilotokens for conditioning: unknowns (c2, c1, c0).
    constexpr double kScale = 1024.0;
    std::array<std::array<double, 4>, 3> m{};
    for (const auto& a : pre_anchors) {
        const double x = a.x / kScale;
        const std::array<double, 3> phi{x * x, x, 1.0};
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) {
                m[r][c] += phi[r] * phi[c];
            }
            m[r][3] += phi[r] * a.y;
        }
    }
    for (int col = 0; col < 3; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 3; ++r) {
            if (std::abs(m[r][col]) > std::abs(m[pivot][col])) {
                pivot = r;
            }
        }
        std::swap(m[col], m[pivot]);
        if (std::abs(m[col][col]) < 1e-12) {
            throw ConfigError("calibrate: anchors do not determine a quadratic");
        }
        for (int r = 0; r < 3; ++r) {
            if (r == col) {
                continue;
            }
            const double f = m[r][col] / m[col][col];
            for (int c = col; c < 4; ++c) {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    base.a2 = m[0][3] / m[0][0] / (kScale * kScale);
    base.a1 = m[1][3] / m[1][1] / kScale;
    base.a0 = m[2][3] / m[2][2];
    return base;
}

CostModel default_cost_model() {
    return calibrate(default_pre_anchors());
}

}  // namespace relay

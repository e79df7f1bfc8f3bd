#pragma once

// Latency cost model, in milliseconds.
//
//   pre(n)  = a2 n^2 + a1 n + a0            prefix pre-inference
//   full(n) = pre(prefix + suffix + items)  baseline / fallback inference
//   rank    = b1 (suffix + items) + b2 suffix^2 + b0
//   load    = bytes / (reload_bandwidth / sharers) + load_fixed
//
// Compute terms scale linearly with layers and width relative to the
// reference shape (8 layers, width 256); b0 and load_fixed do not.

#include <cstddef>
#include <cstdint>
#include <vector>

#include <json.hpp>

namespace relay {

struct Anchor {
    double x = 0.0;
    double y = 0.0;
};

struct CostModel {
    double a2 = 0.0;
    double a1 = 0.0;
    double a0 = 0.0;

    double b1 = 0.004;
    double b2 = 1e-5;
    double b0 = 0.5;

    double reload_bandwidth = 16e9;  ///< bytes/s, DRAM -> HBM
    double load_fixed_ms = 0.5;
    double hbm_bandwidth = 1.6e12;     ///< bytes/s, local HBM read
    double remote_bandwidth = 12.5e9;  ///< bytes/s, cross-server fetch
    double remote_fixed_ms = 1.0;

    std::size_t ref_layers = 8;
    std::size_t ref_dim = 256;

    double retrieval_min_ms = 20.0;
    double retrieval_max_ms = 40.0;
    double preproc_min_ms = 20.0;
    double preproc_max_ms = 40.0;
    double dispatch_min_ms = 1.0;
    double dispatch_max_ms = 5.0;

    double shape_scale(std::size_t layers, std::size_t dim) const noexcept;

    double pre_ms(double n, std::size_t layers, std::size_t dim) const noexcept;
    double full_ms(double n_total, std::size_t layers, std::size_t dim) const noexcept;
    double rank_ms(double suffix, double items, std::size_t layers, std::size_t dim) const noexcept;
    double load_ms(std::uint64_t bytes, std::size_t sharers = 1) const noexcept;
    double local_access_ms(std::uint64_t bytes) const noexcept;
    double remote_fetch_ms(std::uint64_t bytes) const noexcept;

    /// Throws ConfigError on negative coefficients or nonpositive bandwidths.
    void validate() const;

    nlohmann::json to_json() const;
};

/// Pre-inference anchors used when none are configured: the 2K-token point
/// at 35 ms plus two points fixing the superlinear shape.
std::vector<Anchor> default_pre_anchors();

/// Least-squares quadratic through `pre_anchors` (x = tokens, y = ms); other
/// fields are copied from `base`. Throws ConfigError with fewer than three
/// distinct anchors.
CostModel calibrate(const std::vector<Anchor>& pre_anchors, CostModel base = {});

/// The calibrated default.
CostModel default_cost_model();

}  // namespace relay

#include "relay/model.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/core.h>

#include "relay/rng.hpp"

namespace relay {

void ModelConfig::validate() const {
    if (layers < 1) {
        throw ConfigError("model: layers must be >= 1");
    }
    if (dim < 1) {
        throw ConfigError("model: dim must be >= 1");
    }
    if (elem_bytes != 4 && elem_bytes != 8) {
        throw ConfigError(fmt::format("model: elem_bytes must be 4 or 8, got {}", elem_bytes));
    }
}

std::uint64_t kv_cache_bytes(const ModelConfig& config, std::size_t prefix_len) {
    return kv_cache_bytes(config.layers, prefix_len, config.dim, config.elem_bytes);
}

const char* to_string(CacheState state) noexcept {
    switch (state) {
        case CacheState::live_unconsumed: return "live-unconsumed";
        case CacheState::consumed: return "consumed";
        case CacheState::spilled: return "spilled";
        case CacheState::reloading: return "reloading";
        case CacheState::evicted: return "evicted";
    }
    return "?";
}

bool PrefixCache::allowed(CacheState from, CacheState to) noexcept {
    using S = CacheState;
    if (to == S::evicted) {
        return from != S::evicted;
    }
    switch (from) {
        case S::live_unconsumed: return to == S::consumed;
        case S::consumed: return to == S::spilled;
        case S::spilled: return to == S::reloading;
        case S::reloading: return to == S::consumed || to == S::spilled;
        case S::evicted: return false;
    }
    return false;
}

void PrefixCache::transition(CacheState next) {
    if (!allowed(state, next)) {
        throw LifecycleError(fmt::format("cache '{}': illegal transition {} -> {}", user_key, to_string(state),
                                         to_string(next)));
    }
    state = next;
}

double equivalence_epsilon(std::size_t elem_bytes) noexcept {
    return elem_bytes == 4 ? 1e-4 : 1e-6;
}

std::vector<TokenVec> random_tokens(std::uint64_t seed, std::size_t count, std::size_t dim) {
    SplitMix64 rng(seed);
    std::vector<TokenVec> out(count, TokenVec(dim));
    for (auto& tok : out) {
        for (auto& x : tok) {
            x = rng.uniform(-1.0, 1.0);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

// Weight stream: for each layer in order Wq, Wk, Wv (row-major, dim x dim),
// then the scoring head; every entry Uniform(-a, a) with a = sqrt(3 / dim),
// i.e. unit-variance-preserving projections.
Matrix draw_matrix(SplitMix64& rng, std::size_t rows, std::size_t cols, double bound) {
    Matrix m(rows, cols);
    for (auto& x : m.data()) {
        x = rng.uniform(-bound, bound);
    }
    return m;
}

void check_dims(std::span<const TokenVec> tokens, std::size_t dim, const char* segment) {
    for (const auto& t : tokens) {
        if (t.size() != dim) {
            throw ShapeError(fmt::format("{}: token width {} does not match model dim {}", segment, t.size(), dim));
        }
    }
}

// Plain triple-loop helpers for the dense oracle path. Deliberately not
// shared with the kernels.
Matrix dense_matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                acc += a(i, k) * b(k, j);
            }
            out(i, j) = acc;
        }
    }
    return out;
}

// Row softmax over entries where mask(i, j) is true; masked entries get 0.
template <typename Mask>
void masked_softmax_rows(Matrix& logits, Mask&& visible) {
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            if (visible(i, j)) {
                mx = std::max(mx, logits(i, j));
            }
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            if (visible(i, j)) {
                logits(i, j) = std::exp(logits(i, j) - mx);
                denom += logits(i, j);
            } else {
                logits(i, j) = 0.0;
            }
        }
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            logits(i, j) /= denom;
        }
    }
}

Matrix scaled_scores(const Matrix& q, const Matrix& k) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Matrix s(q.rows(), k.rows());
    for (std::size_t i = 0; i < q.rows(); ++i) {
        for (std::size_t j = 0; j < k.rows(); ++j) {
            double acc = 0.0;
            for (std::size_t c = 0; c < q.cols(); ++c) {
                acc += q(i, c) * k(j, c);
            }
            s(i, j) = acc * scale;
        }
    }
    return s;
}

void add_inplace(Matrix& x, const Matrix& delta) {
    auto dst = x.data();
    auto src = delta.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
    }
}

}  // namespace

Backbone::Backbone(ModelConfig config, kernels::Exec exec) : config_(config), exec_(exec) {
    config_.validate();
    SplitMix64 rng(config_.seed);
    const double bound = std::sqrt(3.0 / static_cast<double>(config_.dim));
    weights_.reserve(config_.layers);
    for (std::size_t l = 0; l < config_.layers; ++l) {
        LayerWeights w;
        w.wq = draw_matrix(rng, config_.dim, config_.dim, bound);
        w.wk = draw_matrix(rng, config_.dim, config_.dim, bound);
        w.wv = draw_matrix(rng, config_.dim, config_.dim, bound);
        weights_.push_back(std::move(w));
    }
    head_.resize(config_.dim);
    for (auto& h : head_) {
        h = rng.uniform(-bound, bound);
    }
}

Matrix Backbone::to_matrix(std::span<const TokenVec> a, std::span<const TokenVec> b) const {
    Matrix m(a.size() + b.size(), config_.dim);
    std::size_t r = 0;
    for (const auto& t : a) {
        std::copy(t.begin(), t.end(), m.row(r++).begin());
    }
    for (const auto& t : b) {
        std::copy(t.begin(), t.end(), m.row(r++).begin());
    }
    return m;
}

KvTensors Backbone::full_context_kv(const SegmentedSequence& seq) const {
    const std::size_t d = config_.dim;
    check_dims(seq.user_info, d, "user_info");
    check_dims(seq.long_term, d, "long_term");
    check_dims(seq.short_term, d, "short_term");
    check_dims(seq.cross_features, d, "cross_features");

    std::vector<TokenVec> ctx_tokens;
    for (const auto* seg : {&seq.user_info, &seq.long_term, &seq.short_term, &seq.cross_features}) {
        ctx_tokens.insert(ctx_tokens.end(), seg->begin(), seg->end());
    }
    Matrix x = to_matrix(ctx_tokens);
    KvTensors out;
    for (const auto& w : weights_) {
        Matrix q = dense_matmul(x, w.wq);
        Matrix k = dense_matmul(x, w.wk);
        Matrix v = dense_matmul(x, w.wv);
        Matrix p = scaled_scores(q, k);
        masked_softmax_rows(p, [](std::size_t i, std::size_t j) { return j <= i; });
        add_inplace(x, dense_matmul(p, v));
        out.push_back(LayerKv{std::move(k), std::move(v)});
    }
    return out;
}

ScoreVector Backbone::full_infer(const SegmentedSequence& seq) const {
    const std::size_t d = config_.dim;
    if (seq.candidates.empty()) {
        throw ShapeError("full_infer: candidates must be non-empty");
    }
    check_dims(seq.user_info, d, "user_info");
    check_dims(seq.long_term, d, "long_term");
    check_dims(seq.short_term, d, "short_term");
    check_dims(seq.cross_features, d, "cross_features");
    check_dims(seq.candidates, d, "candidates");

    std::vector<TokenVec> ctx_tokens;
    for (const auto* seg : {&seq.user_info, &seq.long_term, &seq.short_term, &seq.cross_features}) {
        ctx_tokens.insert(ctx_tokens.end(), seg->begin(), seg->end());
    }
    Matrix x = to_matrix(ctx_tokens);
    Matrix y = to_matrix(seq.candidates);
    const std::size_t n = x.rows();
    const std::size_t m = y.rows();

    for (const auto& w : weights_) {
        // All rows (context then candidates) projected together; one mask
        // expresses both causal context and target-aware candidates.
        Matrix all = x;
        all.append_rows(y);
        Matrix q = dense_matmul(all, w.wq);
        Matrix k = dense_matmul(all, w.wk);
        Matrix v = dense_matmul(all, w.wv);
        Matrix p = scaled_scores(q, k);
        masked_softmax_rows(p, [n](std::size_t i, std::size_t j) {
            if (i < n) {
                return j <= i;
            }
            return j < n || j == i;
        });
        Matrix attn = dense_matmul(p, v);
        add_inplace(x, attn.slice_rows(0, n));
        add_inplace(y, attn.slice_rows(n, m));
    }

    ScoreVector scores(m);
    for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            acc += y(i, c) * head_[c];
        }
        scores[i] = acc;
    }
    return scores;
}

PrefixCache Backbone::prefix_preinfer(const UserKey& user_key, std::span<const TokenVec> user_info,
                                      std::span<const TokenVec> long_term, SimTime created_at) const {
    const std::size_t d = config_.dim;
    if (user_info.size() + long_term.size() < 1) {
        throw ShapeError("prefix_preinfer: prefix must contain at least one token");
    }
    check_dims(user_info, d, "user_info");
    check_dims(long_term, d, "long_term");

    Matrix x = to_matrix(user_info, long_term);
    auto kv = std::make_shared<KvTensors>();
    kv->reserve(config_.layers);
    Matrix q, k, v, attn;
    for (const auto& w : weights_) {
        kernels::project(exec_, x, w.wq, q);
        kernels::project(exec_, x, w.wk, k);
        kernels::project(exec_, x, w.wv, v);
        kernels::causal_attend(exec_, q, k, v, 0, attn);
        add_inplace(x, attn);
        kv->push_back(LayerKv{k, v});
    }

    PrefixCache cache;
    cache.user_key = user_key;
    cache.footprint = KvFootprint{config_.layers, x.rows(), config_.dim, config_.elem_bytes};
    cache.byte_size = cache.footprint.bytes();
    cache.created_at = created_at;
    cache.state = CacheState::live_unconsumed;
    cache.model_seed = config_.seed;
    cache.kv = std::move(kv);
    return cache;
}

ScoreVector Backbone::rank_with_cache(const PrefixCache& cache, std::span<const TokenVec> short_term,
                                      std::span<const TokenVec> cross_features,
                                      std::span<const TokenVec> candidates) const {
    const std::size_t d = config_.dim;
    if (cache.state == CacheState::evicted) {
        throw StaleCacheError(fmt::format("rank_with_cache: cache for '{}' was evicted", cache.user_key));
    }
    if (!cache.kv) {
        throw ShapeError("rank_with_cache: cache carries no tensors");
    }
    if (cache.kv->size() != config_.layers || cache.model_seed != config_.seed) {
        throw ShapeError("rank_with_cache: cache was produced under a different model");
    }
    for (const auto& layer : *cache.kv) {
        if (layer.k.cols() != d || layer.v.cols() != d || layer.k.rows() != layer.v.rows() || layer.k.rows() == 0) {
            throw ShapeError("rank_with_cache: cache tensor shape does not match model");
        }
    }
    if (candidates.empty()) {
        throw ShapeError("rank_with_cache: candidates must be non-empty");
    }
    check_dims(short_term, d, "short_term");
    check_dims(cross_features, d, "cross_features");
    check_dims(candidates, d, "candidates");

    const std::size_t prefix = cache.kv->front().k.rows();
    Matrix xs = to_matrix(short_term, cross_features);
    Matrix y = to_matrix(candidates);
    Matrix qs, ks, vs, attn_s, qc, kc, vc, attn_c;

    for (std::size_t l = 0; l < config_.layers; ++l) {
        const auto& w = weights_[l];
        Matrix k_all = (*cache.kv)[l].k;
        Matrix v_all = (*cache.kv)[l].v;
        if (!xs.empty()) {
            kernels::project(exec_, xs, w.wq, qs);
            kernels::project(exec_, xs, w.wk, ks);
            kernels::project(exec_, xs, w.wv, vs);
            k_all.append_rows(ks);
            v_all.append_rows(vs);
            kernels::causal_attend(exec_, qs, k_all, v_all, prefix, attn_s);
        }
        kernels::project(exec_, y, w.wq, qc);
        kernels::project(exec_, y, w.wk, kc);
        kernels::project(exec_, y, w.wv, vc);
        kernels::candidate_attend(exec_, qc, k_all, v_all, kc, vc, attn_c);
        if (!xs.empty()) {
            add_inplace(xs, attn_s);
        }
        add_inplace(y, attn_c);
    }

    ScoreVector scores(y.rows());
    kernels::score(exec_, y, head_, scores);
    return scores;
}

// ---------------------------------------------------------------------------

ScoreVector full_infer(const ModelConfig& config, const SegmentedSequence& seq) {
    return Backbone(config).full_infer(seq);
}

PrefixCache prefix_preinfer(const ModelConfig& config, std::span<const TokenVec> user_info,
                            std::span<const TokenVec> long_term, const UserKey& user_key) {
    return Backbone(config).prefix_preinfer(user_key, user_info, long_term);
}

ScoreVector rank_with_cache(const ModelConfig& config, const PrefixCache& cache, const SegmentedSequence& suffix,
                            std::span<const TokenVec> candidates) {
    if (cache.footprint.layers != config.layers || cache.footprint.dim != config.dim) {
        throw ShapeError("rank_with_cache: cache footprint does not match model config");
    }
    return Backbone(config).rank_with_cache(cache, suffix.short_term, suffix.cross_features, candidates);
}

}  // namespace relay

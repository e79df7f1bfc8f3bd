#include "relay/verify.hpp"

#include <algorithm>
#include <cmath>

#include "relay/rng.hpp"

namespace relay {

nlohmann::json EquivalenceReport::to_json() const {
    return {{"trials", trials},
            {"failures", failures},
            {"max_deviation", max_deviation},
            {"epsilon", epsilon},
            {"passed", passed()}};
}

EquivalenceReport verify_equivalence(std::size_t trials, std::uint64_t seed, std::size_t elem_bytes, bool corrupt,
                                     const EquivalenceLimits& limits, const std::optional<ModelConfig>& shape) {
    EquivalenceReport rep;
    rep.trials = trials;
    rep.epsilon = equivalence_epsilon(elem_bytes);
    for (std::size_t t = 0; t < trials; ++t) {
        SplitMix64 rng(derive_seed(seed, t));
        ModelConfig cfg;
        if (shape) {
            cfg = *shape;
        } else {
            cfg.layers = 1 + rng.below(limits.max_layers);
            cfg.dim = 1 + rng.below(limits.max_dim);
        }
        cfg.elem_bytes = elem_bytes;
        cfg.seed = rng.next();
        const std::size_t prefix = 1 + rng.below(limits.max_prefix);
        const std::size_t suffix = rng.below(limits.max_suffix + 1);
        const std::size_t cross = rng.below(suffix + 1);
        const std::size_t candidates = 1 + rng.below(limits.max_candidates);

        SegmentedSequence seq;
        const std::uint64_t data = rng.next();
        seq.user_info = random_tokens(derive_seed(data, 0), 1, cfg.dim);
        seq.long_term = random_tokens(derive_seed(data, 1), prefix - 1, cfg.dim);
        seq.short_term = random_tokens(derive_seed(data, 2), suffix - cross, cfg.dim);
        seq.cross_features = random_tokens(derive_seed(data, 3), cross, cfg.dim);
        seq.candidates = random_tokens(derive_seed(data, 4), candidates, cfg.dim);

        const Backbone model(cfg);
        PrefixCache cache = model.prefix_preinfer("trial", seq.user_info, seq.long_term);
        if (corrupt) {
            auto kv = std::make_shared<KvTensors>(*cache.kv);
            (*kv)[0].k(0, 0) += 0.5;
            (*kv)[0].v(0, 0) += 0.5;
            cache.kv = std::move(kv);
        }
        const ScoreVector cached = model.rank_with_cache(cache, seq.short_term, seq.cross_features, seq.candidates);
        const ScoreVector full = model.full_infer(seq);
        double dev = cached.size() == full.size() ? 0.0 : INFINITY;
        for (std::size_t i = 0; i < std::min(cached.size(), full.size()); ++i) {
            dev = std::max(dev, std::abs(cached[i] - full[i]));
        }
        rep.max_deviation = std::max(rep.max_deviation, dev);
        if (!(dev <= rep.epsilon)) {
            ++rep.failures;
        }
    }
    return rep;
}

}  // namespace relay

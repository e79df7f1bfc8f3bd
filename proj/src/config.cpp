#include "relay/config.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <fmt/core.h>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace relay {
namespace {

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size() || !std::isfinite(d)) {
            throw std::invalid_argument(v);
        }
        return d;
    } catch (const std::exception&) {
        throw ConfigError(fmt::format("{}: expected a number, got '{}'", key, v));
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    // Accept integral values written in scientific notation (32e9).
    const double d = to_double(key, v);
    if (d < 0 || d != std::floor(d) || d > 1.8e19) {
        throw ConfigError(fmt::format("{}: expected a nonnegative integer, got '{}'", key, v));
    }
    return static_cast<std::uint64_t>(d);
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no" || v == "off") {
        return false;
    }
    throw ConfigError(fmt::format("{}: expected a boolean, got '{}'", key, v));
}

std::vector<Anchor> to_anchors(const std::string& key, const std::string& v) {
    std::vector<Anchor> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) {
            throw ConfigError(fmt::format("{}: expected tokens:ms pairs, got '{}'", key, item));
        }
        out.push_back({to_double(key, item.substr(0, colon)), to_double(key, item.substr(colon + 1))});
    }
    return out;
}

using Setter = std::function<void(SystemConfig&, const std::string& key, const std::string& value)>;

struct Pending {
    std::vector<Anchor> anchors;
    bool coeffs = false;
};

thread_local Pending* g_pending = nullptr;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        // [model]
        t["model.layers"] = [](SystemConfig& c, auto& k, auto& v) { c.model.layers = to_u64(k, v); };
        t["model.dim"] = [](SystemConfig& c, auto& k, auto& v) { c.model.dim = to_u64(k, v); };
        t["model.elem_bytes"] = [](SystemConfig& c, auto& k, auto& v) { c.model.elem_bytes = to_u64(k, v); };
        t["model.seed"] = [](SystemConfig& c, auto& k, auto& v) { c.model.seed = to_u64(k, v); };
        t["model.kv_layers"] = [](SystemConfig& c, auto& k, auto& v) { c.kv_shape.layers = to_u64(k, v); };
        t["model.kv_dim"] = [](SystemConfig& c, auto& k, auto& v) { c.kv_shape.dim = to_u64(k, v); };
        t["model.kv_elem_bytes"] = [](SystemConfig& c, auto& k, auto& v) { c.kv_shape.elem_bytes = to_u64(k, v); };
        // [trigger]
        t["trigger.length_threshold"] = [](SystemConfig& c, auto& k, auto& v) {
            c.trigger.length_threshold = to_u64(k, v);
        };
        t["trigger.dim_threshold"] = [](SystemConfig& c, auto& k, auto& v) { c.trigger.dim_threshold = to_u64(k, v); };
        t["trigger.kv_p99"] = [](SystemConfig& c, auto& k, auto& v) {
            c.trigger.kv_p99 = to_u64(k, v);
            c.kv_p99_set = true;
        };
        t["trigger.hbm_bytes"] = [](SystemConfig& c, auto& k, auto& v) { c.trigger.hbm_bytes = to_u64(k, v); };
        t["trigger.r1"] = [](SystemConfig& c, auto& k, auto& v) { c.trigger.r1 = to_double(k, v); };
        t["trigger.q_m"] = [](SystemConfig& c, auto& k, auto& v) {
            c.trigger.q_m = to_double(k, v);
            c.q_m_set = true;
        };
        t["trigger.m_slots"] = [](SystemConfig& c, auto& k, auto& v) { c.trigger.m_slots = to_u64(k, v); };
        t["trigger.n_instances"] = [](SystemConfig& c, auto& k, auto& v) {
            c.trigger.n_instances = to_u64(k, v);
            c.n_instances_set = true;
        };
        t["trigger.r2"] = [](SystemConfig& c, auto& k, auto& v) {
            c.trigger.r2 = to_double(k, v);
            c.r2_set = true;
        };
        t["trigger.t_life"] = [](SystemConfig& c, auto& k, auto& v) { c.trigger.t_life = to_double(k, v); };
        t["trigger.rank_priority"] = [](SystemConfig& c, auto& k, auto& v) { c.rank_priority = to_bool(k, v); };
        // [router]
        t["router.servers"] = [](SystemConfig& c, auto& k, auto& v) { c.pool.servers = to_u64(k, v); };
        t["router.instances_per_server"] = [](SystemConfig& c, auto& k, auto& v) {
            c.pool.instances_per_server = to_u64(k, v);
        };
        t["router.r2"] = [](SystemConfig& c, auto& k, auto& v) { c.pool.r2 = to_double(k, v); };
        t["router.virtual_nodes"] = [](SystemConfig& c, auto& k, auto& v) {
            c.pool.router.virtual_nodes = to_u64(k, v);
        };
        t["router.per_server_special_cap"] = [](SystemConfig& c, auto& k, auto& v) {
            c.pool.router.per_server_special_cap = to_u64(k, v);
        };
        t["router.churn_at_s"] = [](SystemConfig& c, auto& k, auto& v) { c.pool.churn_at_s = to_double(k, v); };
        t["router.keyless_policy"] = [](SystemConfig& c, auto&, auto& v) {
            c.pool.router.keyless_policy = parse_keyless_policy(v);
        };
        // [cache]
        t["cache.dram_bytes"] = [](SystemConfig& c, auto& k, auto& v) { c.cache.dram_bytes_per_server = to_u64(k, v); };
        t["cache.dram_ttl_s"] = [](SystemConfig& c, auto& k, auto& v) { c.cache.dram_ttl_s = to_double(k, v); };
        t["cache.spill_on_evict"] = [](SystemConfig& c, auto& k, auto& v) { c.cache.spill_on_evict = to_bool(k, v); };
        t["cache.max_concurrent_reloads"] = [](SystemConfig& c, auto& k, auto& v) {
            c.cache.max_concurrent_reloads = to_u64(k, v);
        };
        // [cost]
        auto coeff = [](double CostModel::*field) {
            return [field](SystemConfig& c, const std::string& k, const std::string& v) {
                c.cost.*field = to_double(k, v);
            };
        };
        for (const char* name : {"a2", "a1", "a0"}) {
            const std::string key = name;
            double CostModel::*field = key == "a2" ? &CostModel::a2 : key == "a1" ? &CostModel::a1 : &CostModel::a0;
            t["cost." + key] = [field](SystemConfig& c, auto& k, auto& v) {
                c.cost.*field = to_double(k, v);
                if (g_pending != nullptr) {
                    g_pending->coeffs = true;
                }
            };
        }
        t["cost.pre_anchors"] = [](SystemConfig& c, auto& k, auto& v) {
            if (g_pending != nullptr) {
                g_pending->anchors = to_anchors(k, v);
            } else {
                c.cost = calibrate(to_anchors(k, v), c.cost);
            }
        };
        t["cost.b1"] = coeff(&CostModel::b1);
        t["cost.b2"] = coeff(&CostModel::b2);
        t["cost.b0"] = coeff(&CostModel::b0);
        t["cost.reload_bandwidth"] = coeff(&CostModel::reload_bandwidth);
        t["cost.load_fixed_ms"] = coeff(&CostModel::load_fixed_ms);
        t["cost.hbm_bandwidth"] = coeff(&CostModel::hbm_bandwidth);
        t["cost.remote_bandwidth"] = coeff(&CostModel::remote_bandwidth);
        t["cost.remote_fixed_ms"] = coeff(&CostModel::remote_fixed_ms);
        t["cost.retrieval_min_ms"] = coeff(&CostModel::retrieval_min_ms);
        t["cost.retrieval_max_ms"] = coeff(&CostModel::retrieval_max_ms);
        t["cost.preproc_min_ms"] = coeff(&CostModel::preproc_min_ms);
        t["cost.preproc_max_ms"] = coeff(&CostModel::preproc_max_ms);
        t["cost.dispatch_min_ms"] = coeff(&CostModel::dispatch_min_ms);
        t["cost.dispatch_max_ms"] = coeff(&CostModel::dispatch_max_ms);
        t["cost.ref_layers"] = [](SystemConfig& c, auto& k, auto& v) { c.cost.ref_layers = to_u64(k, v); };
        t["cost.ref_dim"] = [](SystemConfig& c, auto& k, auto& v) { c.cost.ref_dim = to_u64(k, v); };
        // [workload]
        t["workload.offered_qps"] = [](SystemConfig& c, auto& k, auto& v) { c.workload.offered_qps = to_double(k, v); };
        t["workload.horizon_s"] = [](SystemConfig& c, auto& k, auto& v) { c.workload.horizon_s = to_double(k, v); };
        t["workload.max_requests"] = [](SystemConfig& c, auto& k, auto& v) {
            c.workload.max_requests = to_u64(k, v);
        };
        t["workload.long_fraction"] = [](SystemConfig& c, auto& k, auto& v) {
            c.workload.long_fraction = to_double(k, v);
        };
        t["workload.short_min"] = [](SystemConfig& c, auto& k, auto& v) { c.workload.short_min = to_u64(k, v); };
        t["workload.short_max"] = [](SystemConfig& c, auto& k, auto& v) { c.workload.short_max = to_u64(k, v); };
        t["workload.long_min"] = [](SystemConfig& c, auto& k, auto& v) { c.workload.long_min = to_u64(k, v); };
        t["workload.long_max"] = [](SystemConfig& c, auto& k, auto& v) { c.workload.long_max = to_u64(k, v); };
        t["workload.fixed_length"] = [](SystemConfig& c, auto& k, auto& v) { c.workload.fixed_length = to_u64(k, v); };
        t["workload.items"] = [](SystemConfig& c, auto& k, auto& v) { c.workload.items = to_u64(k, v); };
        t["workload.suffix"] = [](SystemConfig& c, auto& k, auto& v) { c.workload.suffix = to_u64(k, v); };
        t["workload.users"] = [](SystemConfig& c, auto& k, auto& v) { c.workload.users = to_u64(k, v); };
        t["workload.refresh_prob"] = [](SystemConfig& c, auto& k, auto& v) {
            c.workload.refresh_prob = to_double(k, v);
        };
        t["workload.refresh_window"] = [](SystemConfig& c, auto& k, auto& v) {
            c.workload.refresh_window = to_u64(k, v);
        };
        t["workload.dram_prewarm"] = [](SystemConfig& c, auto& k, auto& v) {
            c.workload.dram_prewarm = to_double(k, v);
        };
        t["workload.seed"] = [](SystemConfig& c, auto& k, auto& v) { c.workload.seed = to_u64(k, v); };
        t["workload.verify_scores"] = [](SystemConfig& c, auto& k, auto& v) {
            c.workload.verify_scores = to_bool(k, v);
        };
        // [slo]
        t["slo.pipeline_p99_ms"] = [](SystemConfig& c, auto& k, auto& v) { c.slo.pipeline_p99_ms = to_double(k, v); };
        t["slo.ranking_p99_ms"] = [](SystemConfig& c, auto& k, auto& v) { c.slo.ranking_p99_ms = to_double(k, v); };
        t["slo.success_rate"] = [](SystemConfig& c, auto& k, auto& v) { c.slo.success_rate = to_double(k, v); };
        t["slo.timeout_ms"] = [](SystemConfig& c, auto& k, auto& v) { c.slo.timeout_ms = to_double(k, v); };
        return t;
    }();
    return table;
}

}  // namespace

void SystemConfig::validate() const {
    model.validate();
    kv_shape.validate();
    cost.validate();
    if (pool.servers == 0 || pool.instances_per_server == 0) {
        throw ConfigError("router: need at least one server and one instance per server");
    }
    if (!(pool.r2 >= 0.0 && pool.r2 <= 1.0)) {
        throw ConfigError("router: r2 must lie in [0, 1]");
    }
    if (trigger.m_slots == 0) {
        throw ConfigError("trigger: m_slots must be >= 1");
    }
    if (cache.max_concurrent_reloads == 0) {
        throw ConfigError("cache: max_concurrent_reloads must be >= 1");
    }
    if (cache.dram_ttl_s < 0) {
        throw ConfigError("cache: dram_ttl_s must be nonnegative");
    }
    const auto& w = workload;
    if (!(w.offered_qps > 0.0)) {
        throw ConfigError("workload: offered_qps must be positive");
    }
    if (!(w.horizon_s > 0.0)) {
        throw ConfigError("workload: horizon_s must be positive");
    }
    if (!(w.long_fraction >= 0.0 && w.long_fraction <= 1.0) || !(w.refresh_prob >= 0.0 && w.refresh_prob <= 1.0) ||
        !(w.dram_prewarm >= 0.0 && w.dram_prewarm <= 1.0)) {
        throw ConfigError("workload: probabilities must lie in [0, 1]");
    }
    if (w.fixed_length == 0 && (w.short_min == 0 || w.short_max <= w.short_min || w.long_max < w.long_min ||
                                w.long_min == 0)) {
        throw ConfigError("workload: need 0 < short_min < short_max and 0 < long_min <= long_max");
    }
    if (w.items == 0 || w.users == 0) {
        throw ConfigError("workload: items and users must be >= 1");
    }
    if (!(slo.ranking_p99_ms <= slo.pipeline_p99_ms)) {
        throw ConfigError("slo: ranking budget must not exceed the pipeline budget");
    }
    if (!(slo.success_rate >= 0.0 && slo.success_rate <= 1.0) || !(slo.timeout_ms > 0.0)) {
        throw ConfigError("slo: success_rate in [0, 1] and positive timeout required");
    }
    effective_trigger(*this).validate();
}

SystemConfig default_config() {
    SystemConfig c;
    c.trigger.length_threshold = 2048;
    c.trigger.m_slots = 5;
    c.trigger.hbm_bytes = 32'000'000'000ULL;
    c.trigger.r1 = 0.5;
    c.trigger.t_life = 0.3;
    return c;
}

std::size_t max_prefix_len(const WorkloadConfig& w) {
    if (w.fixed_length > 0) {
        return w.fixed_length;
    }
    return w.long_fraction > 0.0 ? std::max(w.long_max, w.short_max - 1) : w.short_max - 1;
}

TriggerConfig effective_trigger(const SystemConfig& cfg) {
    TriggerConfig t = cfg.trigger;
    if (!cfg.n_instances_set) {
        t.n_instances = cfg.pool.total_instances();
    }
    if (!cfg.r2_set) {
        t.r2 = cfg.pool.r2;
    }
    const std::size_t longest = max_prefix_len(cfg.workload);
    if (!cfg.kv_p99_set) {
        t.kv_p99 = std::max<std::uint64_t>(1, kv_cache_bytes(cfg.kv_shape, longest));
    }
    if (!cfg.q_m_set) {
        const double pre = cfg.cost.pre_ms(static_cast<double>(longest), cfg.kv_shape.layers, cfg.kv_shape.dim);
        t.q_m = pre > 0.0 ? std::floor(1000.0 / pre) : 0.0;
    }
    if (cfg.workload.fixed_length > 0) {
        t.length_threshold = std::min(t.length_threshold, cfg.workload.fixed_length - 1);
    }
    return t;
}

void set_config_value(SystemConfig& cfg, const std::string& section, const std::string& key,
                      const std::string& value) {
    const std::string name = section + "." + key;
    const auto& table = setters();
    auto it = table.find(name);
    if (it == table.end()) {
        throw ConfigError(fmt::format("unknown config key '{}'", name));
    }
    it->second(cfg, name, value);
}

SystemConfig parse_config(std::istream& in) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(fmt::format("config: {}", e.what()));
    }
    SystemConfig cfg = default_config();
    Pending pending;
    g_pending = &pending;
    try {
        for (const auto& [section, body] : tree) {
            if (body.empty() && !body.data().empty()) {
                throw ConfigError(fmt::format("config: key '{}' outside any section", section));
            }
            for (const auto& [key, leaf] : body) {
                set_config_value(cfg, section, key, leaf.get_value<std::string>());
            }
        }
    } catch (...) {
        g_pending = nullptr;
        throw;
    }
    g_pending = nullptr;
    if (!pending.anchors.empty()) {
        if (pending.coeffs) {
            throw ConfigError("cost: give either pre_anchors or a2/a1/a0, not both");
        }
        cfg.cost = calibrate(pending.anchors, cfg.cost);
    }
    cfg.validate();
    return cfg;
}

SystemConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError(fmt::format("cannot open config '{}'", path));
    }
    return parse_config(in);
}

nlohmann::json config_to_json(const SystemConfig& c) {
    const TriggerConfig t = effective_trigger(c);
    return {
        {"model", {{"layers", c.model.layers}, {"dim", c.model.dim}, {"elem_bytes", c.model.elem_bytes},
                   {"seed", c.model.seed}, {"kv_layers", c.kv_shape.layers}, {"kv_dim", c.kv_shape.dim},
                   {"kv_elem_bytes", c.kv_shape.elem_bytes}}},
        {"trigger", {{"length_threshold", t.length_threshold}, {"dim_threshold", t.dim_threshold},
                     {"kv_p99", t.kv_p99}, {"hbm_bytes", t.hbm_bytes}, {"r1", t.r1}, {"q_m", t.q_m},
                     {"m_slots", t.m_slots}, {"n_instances", t.n_instances}, {"r2", t.r2}, {"t_life", t.t_life},
                     {"rank_priority", c.rank_priority}}},
        {"router", {{"servers", c.pool.servers}, {"instances_per_server", c.pool.instances_per_server},
                    {"r2", c.pool.r2}, {"virtual_nodes", c.pool.router.virtual_nodes},
                    {"per_server_special_cap", c.pool.router.per_server_special_cap},
                    {"churn_at_s", c.pool.churn_at_s},
                    {"keyless_policy", c.pool.router.keyless_policy == KeylessPolicy::round_robin
                                           ? "round_robin"
                                           : "least_connections"}}},
        {"cache", {{"dram_bytes", c.cache.dram_bytes_per_server}, {"dram_ttl_s", c.cache.dram_ttl_s},
                   {"spill_on_evict", c.cache.spill_on_evict},
                   {"max_concurrent_reloads", c.cache.max_concurrent_reloads}}},
        {"cost", c.cost.to_json()},
        {"workload", {{"offered_qps", c.workload.offered_qps}, {"horizon_s", c.workload.horizon_s},
                      {"max_requests", c.workload.max_requests},
                      {"long_fraction", c.workload.long_fraction}, {"short_min", c.workload.short_min},
                      {"short_max", c.workload.short_max}, {"long_min", c.workload.long_min},
                      {"long_max", c.workload.long_max}, {"fixed_length", c.workload.fixed_length},
                      {"items", c.workload.items}, {"suffix", c.workload.suffix}, {"users", c.workload.users},
                      {"refresh_prob", c.workload.refresh_prob}, {"refresh_window", c.workload.refresh_window},
                      {"dram_prewarm", c.workload.dram_prewarm}, {"seed", c.workload.seed},
                      {"verify_scores", c.workload.verify_scores}}},
        {"slo", {{"pipeline_p99_ms", c.slo.pipeline_p99_ms}, {"ranking_p99_ms", c.slo.ranking_p99_ms},
                 {"success_rate", c.slo.success_rate}, {"timeout_ms", c.slo.timeout_ms}}},
    };
}

}  // namespace relay

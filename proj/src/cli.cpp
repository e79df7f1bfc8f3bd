#include "relay/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fmt/core.h>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "relay/config.hpp"
#include "relay/hash.hpp"
#include "relay/rng.hpp"
#include "relay/simulator.hpp"
#include "relay/verify.hpp"

namespace relay {

nlohmann::json RouteCheckReport::to_json() const {
    return {{"keys", keys},
            {"special_instances", special_instances},
            {"affinity_mismatches", affinity_mismatches},
            {"max_load_deviation", max_load_deviation},
            {"removed", removed},
            {"owned_by_removed", owned_by_removed},
            {"remapped", remapped},
            {"remap_violations", remap_violations},
            {"remapped_fraction", remapped_fraction},
            {"passed", passed()}};
}

RouteCheckReport route_check(const InstancePool& pool, std::size_t keys, std::uint64_t seed,
                             const InstanceId& remove) {
    RouteCheckReport rep;
    rep.keys = keys;
    rep.special_instances = pool.special_count();
    if (rep.special_instances == 0) {
        throw ConfigError("route-check: the pool has no special instances");
    }
    InstancePool live = pool;
    SplitMix64 rng(seed);
    std::vector<UserKey> users(keys);
    std::vector<InstanceId> before(keys);
    std::unordered_map<InstanceId, std::size_t> owned;
    for (std::size_t i = 0; i < keys; ++i) {
        users[i] = fmt::format("user-{:016x}", rng.next());
        const RouteDecision pre = route(live, Request::pre_infer(users[i]));
        const RouteDecision rank = route(live, Request::rank(users[i], {1}, true));
        if (pre.instance_id != rank.instance_id) {
            ++rep.affinity_mismatches;
        }
        before[i] = pre.instance_id;
        ++owned[pre.instance_id];
    }
    const double fair = static_cast<double>(keys) / static_cast<double>(rep.special_instances);
    for (const InstanceInfo& info : pool.instances()) {
        if (info.kind != InstanceKind::special) {
            continue;
        }
        const double share = static_cast<double>(owned[info.instance_id]);
        rep.max_load_deviation = std::max(rep.max_load_deviation, std::abs(share - fair) / fair);
    }

    rep.removed = remove;
    if (rep.removed.empty()) {
        for (const InstanceInfo& info : pool.instances()) {
            if (info.kind == InstanceKind::special) {
                rep.removed = info.instance_id;
                break;
            }
        }
    }
    const InstancePool after = remove_instance(pool, rep.removed);
    if (after.special_count() == 0) {
        return rep;
    }
    for (std::size_t i = 0; i < keys; ++i) {
        const bool was_removed = before[i] == rep.removed;
        rep.owned_by_removed += was_removed ? 1 : 0;
        if (*after.owner(users[i]) != before[i]) {
            ++rep.remapped;
            if (!was_removed) {
                ++rep.remap_violations;
            }
        }
    }
    rep.remapped_fraction = keys == 0 ? 0.0 : static_cast<double>(rep.remapped) / static_cast<double>(keys);
    return rep;
}

namespace {

struct ConfigArgs {
    std::string path;
    std::vector<std::string> overrides;
};

void add_config_args(CLI::App* cmd, ConfigArgs& a) {
    cmd->add_option("-c,--config", a.path, "INI config file (defaults when omitted)");
    cmd->add_option("--set", a.overrides, "Override as section.key=value (repeatable)");
}

SystemConfig load(const ConfigArgs& a) {
    SystemConfig cfg = a.path.empty() ? default_config() : load_config(a.path);
    for (const std::string& o : a.overrides) {
        const auto dot = o.find('.');
        const auto eq = o.find('=');
        if (dot == std::string::npos || eq == std::string::npos || dot > eq) {
            throw ConfigError(fmt::format("--set expects section.key=value, got '{}'", o));
        }
        set_config_value(cfg, o.substr(0, dot), o.substr(dot + 1, eq - dot - 1), o.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

std::string config_hash(const SystemConfig& cfg) {
    return fmt::format("{:016x}", stable_hash64(config_to_json(cfg).dump()));
}

/// Writes through a temporary file so readers never see partial output.
void write_file(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) {
            throw ConfigError(fmt::format("cannot write '{}'", tmp.string()));
        }
        body(f);
    }
    std::filesystem::rename(tmp, path);
}

nlohmann::json manifest(const std::string& command, const ConfigArgs& a, const SystemConfig& cfg,
                        const std::string& out_dir) {
    return {{"tool", "relayctl"},
            {"version", kToolVersion},
            {"command", command},
            {"config_path", a.path},
            {"overrides", a.overrides},
            {"config_hash", config_hash(cfg)},
            {"seed", cfg.workload.seed},
            {"output_dir", out_dir},
            {"config", config_to_json(cfg)}};
}

std::vector<std::string> split(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

int cmd_plan(const ConfigArgs& a, const std::string& format, std::ostream& out, std::ostream& err) {
    const SystemConfig cfg = load(a);
    const TriggerConfig t = effective_trigger(cfg);
    const CapacityPlan plan = compute_capacity_plan(t);
    if (plan.special_instances == 0) {
        err << "warning: r2 * N < 1, no special instances; q_max = 0\n";
    }
    if (format == "json") {
        nlohmann::json j = plan.to_json();
        j["window_cap"] = plan.window_cap(t.t_life);
        j["t_life"] = t.t_life;
        out << j.dump(2) << "\n";
    } else if (format == "csv") {
        out << "l_max,q_admit_max,q_max,binding_constraint,special_instances,window_cap\n";
        out << fmt::format("{},{},{},{},{},{}\n", plan.l_max, plan.q_admit_max, plan.q_max,
                           to_string(plan.binding_constraint), plan.special_instances, plan.window_cap(t.t_life));
    } else {
        out << fmt::format("l_max              {}\n", plan.l_max);
        out << fmt::format("q_admit_max        {}\n", plan.q_admit_max);
        out << fmt::format("q_max              {}\n", plan.q_max);
        out << fmt::format("binding_constraint {}\n", to_string(plan.binding_constraint));
        out << fmt::format("special_instances  {}\n", plan.special_instances);
        out << fmt::format("window_cap         {}  (admissions per {} s)\n", plan.window_cap(t.t_life), t.t_life);
    }
    return kExitOk;
}

int cmd_verify(const ConfigArgs& a, std::size_t trials, std::uint64_t seed, std::optional<std::size_t> elem_bytes,
               bool corrupt, const std::string& format, std::ostream& out) {
    std::optional<ModelConfig> shape;
    std::size_t bytes = elem_bytes.value_or(8);
    if (!a.path.empty() || !a.overrides.empty()) {
        const SystemConfig cfg = load(a);
        shape = cfg.model;
        bytes = elem_bytes.value_or(cfg.model.elem_bytes);
    }
    if (bytes != 4 && bytes != 8) {
        throw ConfigError("verify: elem-bytes must be 4 or 8");
    }
    const EquivalenceReport rep = verify_equivalence(trials, seed, bytes, corrupt, {}, shape);
    if (format == "json") {
        out << rep.to_json().dump(2) << "\n";
    } else {
        out << fmt::format("trials         {}\n", rep.trials);
        out << fmt::format("max_deviation  {:.3e}\n", rep.max_deviation);
        out << fmt::format("epsilon        {:.0e}\n", rep.epsilon);
        out << fmt::format("failures       {}\n", rep.failures);
        out << (rep.passed() ? "PASS\n" : "FAIL\n");
    }
    return rep.passed() ? kExitOk : kExitCheckFailed;
}

int cmd_route_check(const ConfigArgs& a, std::size_t keys, std::uint64_t seed, const std::string& remove,
                    const std::string& format, std::ostream& out) {
    const SystemConfig cfg = load(a);
    const InstancePool pool =
        InstancePool::build(cfg.pool.servers, cfg.pool.instances_per_server, cfg.pool.r2, cfg.pool.router);
    const RouteCheckReport rep = route_check(pool, keys, seed, remove);
    if (format == "json") {
        out << rep.to_json().dump(2) << "\n";
    } else {
        out << fmt::format("keys                {}\n", rep.keys);
        out << fmt::format("special_instances   {}\n", rep.special_instances);
        out << fmt::format("affinity_mismatches {}\n", rep.affinity_mismatches);
        out << fmt::format("max_load_deviation  {:.4f}\n", rep.max_load_deviation);
        out << fmt::format("removed             {}\n", rep.removed);
        out << fmt::format("owned_by_removed    {}\n", rep.owned_by_removed);
        out << fmt::format("remapped            {} ({:.4f})\n", rep.remapped, rep.remapped_fraction);
        out << fmt::format("remap_violations    {}\n", rep.remap_violations);
        out << (rep.passed() ? "PASS\n" : "FAIL\n");
    }
    return rep.passed() ? kExitOk : kExitCheckFailed;
}

int cmd_simulate(const ConfigArgs& a, const std::string& mode_text, std::optional<std::uint64_t> seed,
                 const std::string& out_dir, bool with_trace, const std::string& format, std::ostream& out) {
    SystemConfig cfg = load(a);
    if (seed) {
        cfg.workload.seed = *seed;
    }
    const Mode mode = parse_mode(mode_text);
    TraceLog trace(with_trace);
    const SimReport rep = run(cfg, mode, with_trace ? &trace : nullptr);

    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    write_file(dir / "summary.csv", [&](std::ostream& f) { write_summary_csv(f, {rep}); });
    write_file(dir / "histograms.csv", [&](std::ostream& f) { rep.latencies.write_histograms_csv(f, 1.0); });
    write_file(dir / "report.txt", [&](std::ostream& f) { write_report_text(f, rep); });
    write_file(dir / "report.json", [&](std::ostream& f) { f << rep.to_json().dump(2) << "\n"; });
    if (with_trace) {
        write_file(dir / "trace.csv", [&](std::ostream& f) { trace.write_csv(f); });
    }
    nlohmann::json m = manifest("simulate", a, cfg, out_dir);
    m["mode"] = to_string(mode);
    m["trace"] = with_trace;
    write_file(dir / "manifest.json", [&](std::ostream& f) { f << m.dump(2) << "\n"; });

    if (format == "json") {
        out << rep.to_json().dump(2) << "\n";
    } else if (format == "csv") {
        write_summary_csv(out, {rep});
    } else {
        write_report_text(out, rep);
    }
    return kExitOk;
}

int cmd_sweep(const ConfigArgs& a, const std::string& param, const std::string& values_text,
              const std::string& modes_text, const std::string& metric_text, const std::string& target_text,
              const std::string& out_dir, std::ostream& out) {
    const SystemConfig cfg = load(a);
    std::vector<double> values;
    for (const std::string& v : split(values_text)) {
        try {
            values.push_back(std::stod(v));
        } catch (const std::exception&) {
            throw ConfigError(fmt::format("sweep: bad value '{}'", v));
        }
    }
    if (values.empty()) {
        throw ConfigError("sweep: no values given");
    }
    std::vector<Mode> modes;
    for (const std::string& m : split(modes_text)) {
        modes.push_back(parse_mode(m));
    }
    const SweepMetric metric = parse_sweep_metric(metric_text);
    const SloTarget target = parse_slo_target(target_text);
    const std::vector<SweepRow> rows = sweep(cfg, param, values, modes, metric, target);

    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    write_file(dir / "sweep.csv", [&](std::ostream& f) { write_sweep_csv(f, rows, metric); });
    nlohmann::json m = manifest("sweep", a, cfg, out_dir);
    m["param"] = param;
    m["values"] = values;
    m["modes"] = split(modes_text);
    m["metric"] = to_string(metric);
    m["target"] = to_string(target);
    write_file(dir / "manifest.json", [&](std::ostream& f) { f << m.dump(2) << "\n"; });
    write_sweep_csv(out, rows, metric);
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"relayctl: relay-race inference planning, verification and simulation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    ConfigArgs cfg_args;
    std::string format = "text";
    auto format_opt = [&](CLI::App* cmd) {
        cmd->add_option("-f,--format", format, "Output format")->check(CLI::IsMember({"text", "json", "csv"}));
    };

    CLI::App* plan = app.add_subcommand("plan", "Capacity plan from the trigger budgets");
    add_config_args(plan, cfg_args);
    format_opt(plan);

    std::size_t trials = 100;
    std::uint64_t seed = 1;
    std::optional<std::size_t> elem_bytes;
    bool corrupt = false;
    CLI::App* verify = app.add_subcommand("verify", "Cached ranking vs full inference on random instances");
    add_config_args(verify, cfg_args);
    format_opt(verify);
    verify->add_option("--trials", trials, "Random instances")->check(CLI::PositiveNumber);
    verify->add_option("--seed", seed, "Seed");
    verify->add_option("--elem-bytes", elem_bytes, "Element width (4 or 8) selecting the tolerance");
    verify->add_flag("--corrupt", corrupt, "Perturb each cache (negative control)");

    std::size_t keys = 100000;
    std::string remove;
    CLI::App* rc = app.add_subcommand("route-check", "Affinity and churn check over random keys");
    add_config_args(rc, cfg_args);
    format_opt(rc);
    rc->add_option("--keys", keys, "Random user keys");
    rc->add_option("--seed", seed, "Seed");
    rc->add_option("--remove", remove, "Special instance to remove (first special by default)");

    std::string mode = "relay";
    std::optional<std::uint64_t> sim_seed;
    std::string out_dir = "out";
    bool with_trace = false;
    CLI::App* sim = app.add_subcommand("simulate", "One simulated run with report, CSVs and manifest");
    add_config_args(sim, cfg_args);
    format_opt(sim);
    sim->add_option("-m,--mode", mode, "baseline, relay or relay_dram");
    sim->add_option("--seed", sim_seed, "Workload seed override");
    sim->add_option("-o,--out", out_dir, "Output directory");
    sim->add_flag("--trace", with_trace, "Also write the event trace");

    std::string param;
    std::string values;
    std::string modes = "baseline,relay";
    std::string metric = "report";
    std::string target = "pipeline";
    CLI::App* sw = app.add_subcommand("sweep", "One run (or search) per parameter value and mode");
    add_config_args(sw, cfg_args);
    sw->add_option("-p,--param", param, "Knob to sweep")->required();
    sw->add_option("-v,--values", values, "Comma-separated values")->required();
    sw->add_option("-m,--modes", modes, "Comma-separated modes");
    sw->add_option("--metric", metric, "report, qps, concurrency or max_seq");
    sw->add_option("--target", target, "SLO budget for searches: pipeline or ranking");
    sw->add_option("-o,--out", out_dir, "Output directory");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << kToolVersion << "\n";
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfigError;
    }

    try {
        if (*plan) return cmd_plan(cfg_args, format, out, err);
        if (*verify) return cmd_verify(cfg_args, trials, seed, elem_bytes, corrupt, format, out);
        if (*rc) return cmd_route_check(cfg_args, keys, seed, remove, format, out);
        if (*sim) return cmd_simulate(cfg_args, mode, sim_seed, out_dir, with_trace, format, out);
        if (*sw) return cmd_sweep(cfg_args, param, values, modes, metric, target, out_dir, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const PoolError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const InvariantViolation& e) {
        err << "invariant violation: " << e.what() << "\n";
        err << "offending event: " << e.trace_line() << "\n";
        return kExitCheckFailed;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitCheckFailed;
    }
    return kExitConfigError;
}

}  // namespace relay

// disagg: single-load activation-profile monitoring from aggregate power.
// Subcommands wire the pipeline end to end: synth -> extract-gt -> train ->
// predict -> eval. Every run writes a .manifest next to its outputs.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "disagg/dataio.hpp"
#include "disagg/exec.hpp"
#include "disagg/kvconfig.hpp"
#include "disagg/metrics.hpp"
#include "disagg/model.hpp"
#include "disagg/train.hpp"

#ifndef DISAGG_VERSION
#define DISAGG_VERSION "0.1.0"
#endif

using namespace disagg;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct ManifestWriter {
    KvDoc doc;
    Clock::time_point t0 = Clock::now();

    ManifestWriter(const std::string& command, uint64_t seed) {
        doc.set("run.command", command);
        doc.set("run.version", DISAGG_VERSION);
        doc.set_int("run.seed", static_cast<long>(seed));
    }
    void field(const std::string& key, const std::string& value) {
        doc.set("run." + key, value);
    }
    void write(const std::string& next_to) {
        const double ms = std::chrono::duration<double, std::milli>(
                              Clock::now() - t0)
                              .count();
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.1f", ms);
        doc.set("run.wall_ms", buf);
        doc.save_file(next_to + ".manifest");
    }
};

SignalSeries load_single_series(const std::string& path, double max_gap) {
    IngestResult r = ingest_csv(path, max_gap);
    size_t best = 0;
    for (size_t i = 1; i < r.series.size(); ++i)
        if (r.series[i].size() > r.series[best].size()) best = i;
    if (r.series.size() > 1)
        std::cerr << "note: " << path << " splits into " << r.series.size()
                  << " series at long gaps; using the longest ("
                  << r.series[best].size() << " samples)\n";
    return std::move(r.series[best]);
}

// accepts both (timestamp, state) and (timestamp, posterior, state) rows
ActivationProfile read_states_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open profile file: " + path);
    ActivationProfile p;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream is(line);
        std::vector<std::string> fields;
        std::string tok;
        while (is >> tok) fields.push_back(tok);
        if (fields.size() < 2) {
            if (lineno == 1) continue;  // header
            throw DataError(path + ":" + std::to_string(lineno) + ": short row");
        }
        const std::string& last = fields.back();
        if (last == "0")
            p.states.push_back(0);
        else if (last == "1")
            p.states.push_back(1);
        else if (lineno == 1)
            continue;  // header
        else
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": state must be 0 or 1, got '" + last + "'");
    }
    if (p.states.empty()) throw DataError(path + ": no state rows");
    return p;
}

int cmd_extract_gt(const std::string& input, const std::string& load_code,
                   const std::string& params_path, double resample_period,
                   const std::string& out, uint64_t seed) {
    ManifestWriter manifest("extract-gt", seed);
    manifest.field("input", input);
    manifest.field("load", load_code);

    const std::vector<LoadParams> table =
        params_path.empty() ? default_load_params() : read_load_params(params_path);
    const LoadParams& p = find_load(table, load_code);

    IngestResult r = ingest_csv(input);
    size_t on_total = 0, samples = 0, activations = 0;
    std::ofstream outf(out);
    if (!outf) throw DataError("cannot write: " + out);
    outf.precision(10);
    for (SignalSeries& s : r.series) {
        if (resample_period > 0.0 && resample_period != s.sample_period)
            s = forward_fill_resample(s, resample_period);
        const ActivationProfile w = extract_activation_profile(s, p);
        for (size_t i = 0; i < w.states.size(); ++i)
            outf << s.start_time + static_cast<double>(i) * s.sample_period << ','
                 << static_cast<int>(w.states[i]) << '\n';
        for (uint8_t st : w.states) on_total += st;
        samples += w.states.size();
        activations += w.activation_count();
    }
    if (!outf) throw DataError("write failed: " + out);

    const double on_fraction =
        samples ? static_cast<double>(on_total) / static_cast<double>(samples) : 0.0;
    std::cout << "samples " << samples << "\non_samples " << on_total
              << "\non_fraction " << on_fraction << "\nactivations "
              << activations << '\n';
    manifest.field("output", out);
    manifest.write(out);
    return 0;
}

int cmd_synth(const std::string& out_dir, uint64_t seed, double hours,
              double baseline, double noise, const std::string& loads_csv) {
    ManifestWriter manifest("synth", seed);
    SynthConfig cfg = SynthConfig::default_household();
    cfg.hours = hours;
    cfg.baseline_w = baseline;
    cfg.noise_sigma_w = noise;
    if (loads_csv != "fridge,kettle,washer") {
        std::vector<ApplianceSpec> chosen;
        std::istringstream is(loads_csv);
        std::string name;
        while (std::getline(is, name, ',')) {
            if (name.empty()) continue;
            bool found = false;
            for (const auto& a : cfg.appliances)
                if (a.name == name) {
                    chosen.push_back(a);
                    found = true;
                }
            if (!found)
                throw ConfigError("unknown appliance '" + name +
                                  "' (available: fridge, kettle, washer)");
        }
        cfg.appliances = std::move(chosen);
    }

    const SynthHousehold h = synth_household(cfg, seed);
    fs::create_directories(out_dir);
    const std::string agg_path = (fs::path(out_dir) / "aggregate.csv").string();
    write_signal_csv(agg_path, h.aggregate);
    manifest.field("aggregate", agg_path);
    for (const auto& [name, load] : h.loads) {
        const std::string p = (fs::path(out_dir) / (name + ".csv")).string();
        write_signal_csv(p, load);
    }
    std::cout << "samples " << h.aggregate.size() << "\nloads " << h.loads.size()
              << '\n';
    manifest.field("hours", std::to_string(hours));
    manifest.write(agg_path);
    return 0;
}

int cmd_train(const std::string& aggregate_path, const std::string& truth_path,
              const std::string& preset, const std::string& model_cfg_path,
              int window, const std::string& out, uint64_t seed,
              TrainRunConfig rc, double train_frac, double val_frac,
              const std::string& history_path) {
    ManifestWriter manifest("train", seed);
    manifest.field("aggregate", aggregate_path);
    manifest.field("truth", truth_path);
    manifest.field("preset", model_cfg_path.empty() ? preset : model_cfg_path);

    ModelConfig mc;
    if (!model_cfg_path.empty()) {
        std::ifstream in(model_cfg_path);
        if (!in) throw ConfigError("cannot open model config: " + model_cfg_path);
        std::ostringstream ss;
        ss << in.rdbuf();
        mc = config_from_kv(ss.str());
        if (window > 0) mc.window = window;
    } else {
        mc = ModelConfig::preset(preset, window);
    }

    const SignalSeries x = load_single_series(aggregate_path, 180.0);
    const ActivationProfile w = read_states_csv(truth_path);
    if (x.size() != w.size())
        throw DataError("aggregate has " + std::to_string(x.size()) +
                        " samples but the truth profile has " +
                        std::to_string(w.size()));

    if (!(train_frac > 0.0 && train_frac <= 1.0) || val_frac < 0.0 ||
        train_frac + val_frac > 1.0)
        throw ConfigError("fold fractions must satisfy 0 < train, 0 <= val, "
                          "train + val <= 1");
    const size_t n = x.size();
    const size_t n_train = static_cast<size_t>(train_frac * n);
    const size_t n_val = static_cast<size_t>(val_frac * n);

    const auto slice = [&](size_t from, size_t count) {
        SignalSeries xs;
        xs.sample_period = x.sample_period;
        xs.start_time = x.start_time + from * x.sample_period;
        xs.samples.assign(x.samples.begin() + from, x.samples.begin() + from + count);
        ActivationProfile ws;
        ws.states.assign(w.states.begin() + from, w.states.begin() + from + count);
        return std::make_pair(xs, ws);
    };

    const auto [x_train, w_train] = slice(0, n_train);
    const Standardizer z = Standardizer::fit(x_train.samples);

    const SegmentSet train_set =
        make_segments(x_train, w_train, mc.window, z, Fold::train);
    SegmentSet val_set;
    val_set.window = mc.window;
    if (n_val >= static_cast<size_t>(mc.window)) {
        const auto [x_val, w_val] = slice(n_train, n_val);
        val_set = make_segments(x_val, w_val, mc.window, z, Fold::val);
    }

    auto model = Model<float>::build(mc, seed);
    model.input_mean = z.mean;
    model.input_std = z.stddev;
    model.has_standardizer = true;

    rc.seed = seed;
    Nadam<float> opt(rc.optimizer);
    TrainHistory hist;
    int exit_code = 0;
    try {
        hist = train_loop(model, train_set, val_set, rc, &opt);
    } catch (const NumericError& e) {
        std::cerr << "numeric abort: " << e.what() << '\n';
        exit_code = 3;
    }

    model.save_checkpoint(out, opt.export_state());
    const std::string hist_out = history_path.empty() ? out + ".history.tsv"
                                                      : history_path;
    std::ofstream hf(hist_out);
    hf << hist.to_log();

    std::cout << "segments_train " << train_set.size() << "\nsegments_val "
              << val_set.size() << "\nparameters " << model.parameter_count()
              << '\n';
    if (!hist.rows.empty())
        std::cout << "final_train_loss " << hist.rows.back().train_loss
                  << "\nbest_epoch " << hist.best_epoch << '\n';
    manifest.field("output", out);
    manifest.field("history", hist_out);
    manifest.field("window", std::to_string(mc.window));
    manifest.write(out);
    return exit_code;
}

int cmd_predict(const std::string& checkpoint, const std::string& input,
                const std::string& out, uint64_t seed) {
    ManifestWriter manifest("predict", seed);
    manifest.field("checkpoint", checkpoint);
    manifest.field("input", input);

    auto model = Model<float>::load_checkpoint(checkpoint);
    if (!model.has_standardizer)
        throw DataError(checkpoint + ": no input standardization stored");
    const int window = model.config().window;
    const Standardizer z{model.input_mean, model.input_std};

    IngestResult r = ingest_csv(input);
    std::ofstream outf(out);
    if (!outf) throw DataError("cannot write: " + out);
    outf.precision(10);

    for (const SignalSeries& s : r.series) {
        const size_t n = s.size();
        for (size_t off = 0; off < n; off += static_cast<size_t>(window)) {
            const size_t remain = std::min<size_t>(window, n - off);
            Tensor3<float> xw(1, 1, window);  // zero-padded in standardized units
            for (size_t i = 0; i < remain; ++i)
                xw.data[i] = static_cast<float>(z.apply(s.samples[off + i]));
            const Tensor3<float> posterior = model.forward(xw, Phase::infer);
            for (size_t i = 0; i < remain; ++i) {
                const float p = posterior.at(0, 0, static_cast<int>(i));
                outf << s.start_time + (off + i) * s.sample_period << ','
                     << p << ',' << (p >= 0.5f ? 1 : 0) << '\n';
            }
        }
    }
    if (!outf) throw DataError("write failed: " + out);
    manifest.field("output", out);
    manifest.write(out);
    return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& truth_path,
             const std::string& out_prefix) {
    ManifestWriter manifest("eval", 0);
    manifest.field("predicted", pred_path);
    manifest.field("truth", truth_path);

    const ActivationProfile pred = read_states_csv(pred_path);
    const ActivationProfile truth = read_states_csv(truth_path);
    const ContingencyTable t = tabulate(pred.states, truth.states);
    const MetricReport report = compute_report(t);

    const std::string row = format_report_row(report);
    std::cout << row;
    {
        std::ofstream f(out_prefix + ".txt");
        if (!f) throw DataError("cannot write: " + out_prefix + ".txt");
        f << row;
    }
    {
        std::ofstream f(out_prefix + ".kv");
        if (!f) throw DataError("cannot write: " + out_prefix + ".kv");
        f << format_report_kv(report);
    }
    manifest.field("output", out_prefix + ".txt");
    manifest.write(out_prefix);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"single-load activation-profile monitoring from aggregate power"};
    app.require_subcommand(1);
    app.set_version_flag("--version", DISAGG_VERSION);

    bool deterministic = false;
    app.add_flag("--deterministic", deterministic,
                 "force serial kernel execution (results are identical either "
                 "way for a fixed seed)");

    // extract-gt
    auto* gt = app.add_subcommand("extract-gt",
                                  "ground-truth activation profile from a "
                                  "sub-metered power CSV");
    std::string gt_input, gt_load, gt_params, gt_out;
    double gt_resample = 0.0;
    gt->add_option("--input", gt_input, "sub-metered CSV (timestamp, watts)")
        ->required();
    gt->add_option("--load", gt_load, "load code (e.g. FR, KT, WM)")->required();
    gt->add_option("--params", gt_params,
                   "load-params CSV; built-in table when omitted");
    gt->add_option("--resample-period", gt_resample,
                   "forward-fill to this period [s] before extraction");
    gt->add_option("--out", gt_out, "output profile CSV")->required();

    // synth
    auto* sy = app.add_subcommand("synth", "synthetic household generator");
    std::string sy_out, sy_loads = "fridge,kettle,washer";
    uint64_t sy_seed = 0;
    double sy_hours = 48.0, sy_baseline = 100.0, sy_noise = 5.0;
    sy->add_option("--out", sy_out, "output directory")->required();
    sy->add_option("--seed", sy_seed, "generator seed");
    sy->add_option("--hours", sy_hours, "trace length in hours");
    sy->add_option("--baseline", sy_baseline, "always-on baseline [W]");
    sy->add_option("--noise", sy_noise, "sensor noise sigma [W]");
    sy->add_option("--loads", sy_loads, "comma list of fridge,kettle,washer "
                                        "(empty for baseline only)");

    // train
    auto* tr = app.add_subcommand("train", "train on an aggregate signal "
                                           "against a truth profile");
    std::string tr_agg, tr_truth, tr_preset = "desk", tr_model_cfg, tr_out,
                tr_history;
    uint64_t tr_seed = 0;
    int tr_window = 0;
    TrainRunConfig tr_rc;
    double tr_train_frac = 0.6, tr_val_frac = 0.2;
    tr->add_option("--aggregate", tr_agg, "aggregate CSV")->required();
    tr->add_option("--truth", tr_truth, "truth profile CSV")->required();
    tr->add_option("--preset", tr_preset, "model preset: desk or paper");
    tr->add_option("--model-config", tr_model_cfg,
                   "model config file (overrides --preset)");
    tr->add_option("--window", tr_window, "override the preset window length");
    tr->add_option("--out", tr_out, "output checkpoint path")->required();
    tr->add_option("--seed", tr_seed, "training seed");
    tr->add_option("--epochs", tr_rc.epochs, "epoch count");
    tr->add_option("--batch-size", tr_rc.batch_size, "mini-batch size");
    tr->add_option("--lr", tr_rc.optimizer.learning_rate, "learning rate");
    tr->add_option("--patience", tr_rc.patience, "early-stop patience");
    tr->add_option("--train-frac", tr_train_frac, "leading fraction for training");
    tr->add_option("--val-frac", tr_val_frac, "following fraction for validation");
    tr->add_option("--history", tr_history, "history log path");

    // predict
    auto* pr = app.add_subcommand("predict", "posterior + states for an "
                                             "aggregate CSV");
    std::string pr_ckpt, pr_input, pr_out;
    uint64_t pr_seed = 0;
    pr->add_option("--checkpoint", pr_ckpt, "trained checkpoint")->required();
    pr->add_option("--input", pr_input, "aggregate CSV")->required();
    pr->add_option("--out", pr_out, "output CSV (timestamp, posterior, state)")
        ->required();
    pr->add_option("--seed", pr_seed, "recorded in the manifest");

    // eval
    auto* ev = app.add_subcommand("eval", "score a prediction against truth");
    std::string ev_pred, ev_truth, ev_out;
    ev->add_option("--pred", ev_pred, "prediction or profile CSV")->required();
    ev->add_option("--truth", ev_truth, "truth profile CSV")->required();
    ev->add_option("--out", ev_out, "report path prefix")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage errors all map to exit 1
    }

    set_execution_policy(deterministic ? Exec::serial : Exec::parallel);

    try {
        if (gt->parsed())
            return cmd_extract_gt(gt_input, gt_load, gt_params, gt_resample,
                                  gt_out, 0);
        if (sy->parsed())
            return cmd_synth(sy_out, sy_seed, sy_hours, sy_baseline, sy_noise,
                             sy_loads);
        if (tr->parsed())
            return cmd_train(tr_agg, tr_truth, tr_preset, tr_model_cfg,
                             tr_window, tr_out, tr_seed, tr_rc, tr_train_frac,
                             tr_val_frac, tr_history);
        if (pr->parsed()) return cmd_predict(pr_ckpt, pr_input, pr_out, pr_seed);
        if (ev->parsed()) return cmd_eval(ev_pred, ev_truth, ev_out);
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric abort: " << e.what() << '\n';
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::runtime_error& e) {  // Shape/State and the rest
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

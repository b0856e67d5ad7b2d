#include "disagg/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "disagg/rng.hpp"

namespace disagg {

bool SignalSeries::has_negatives() const {
    return std::any_of(samples.begin(), samples.end(),
                       [](double v) { return v < 0.0; });
}

double ActivationProfile::on_fraction() const {
    if (states.empty()) return 0.0;
    size_t on = 0;
    for (uint8_t s : states) on += s;
    return static_cast<double>(on) / static_cast<double>(states.size());
}

size_t ActivationProfile::activation_count() const {
    size_t count = 0;
    uint8_t prev = 0;
    for (uint8_t s : states) {
        if (s && !prev) ++count;
        prev = s;
    }
    return count;
}

const std::vector<LoadParams>& default_load_params() {
    static const std::vector<LoadParams> table = {
        {"FR", 5, 5, 60, 60},      {"LC", 10, 10, 60, 60},
        {"DW", 10, 10, 1800, 300}, {"WM", 20, 20, 1800, 300},
        {"SP", 20, 20, 60, 60},    {"TV", 5, 5, 180, 180},
        {"BL", 25, 25, 300, 300},  {"KT", 1000, 1000, 20, 10},
        {"MC", 50, 50, 10, 10},    {"TS", 300, 300, 10, 3},
    };
    return table;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::string s = line;
    std::replace(s.begin(), s.end(), ',', ' ');
    std::istringstream is(s);
    std::vector<std::string> out;
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

bool parse_double(const std::string& s, double& out) {
    try {
        size_t pos = 0;
        out = std::stod(s, &pos);
        return pos == s.size();
    } catch (...) {
        return false;
    }
}

}  // namespace

std::vector<LoadParams> read_load_params(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open load-params file: " + path);
    std::vector<LoadParams> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto f = split_fields(line);
        if (f.empty()) continue;
        LoadParams p;
        p.code = f[0];
        if (f.size() != 5 || !parse_double(f[1], p.p_on) ||
            !parse_double(f[2], p.p_off) || !parse_double(f[3], p.n_on_s) ||
            !parse_double(f[4], p.n_off_s)) {
            if (lineno == 1) continue;  // header
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": expected 'code, P_on, P_off, N_on_s, N_off_s'");
        }
        if (p.p_on < p.p_off || p.p_off < 0)
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": requires P_on >= P_off >= 0");
        out.push_back(p);
    }
    return out;
}

const LoadParams& find_load(const std::vector<LoadParams>& params,
                            const std::string& code) {
    for (const auto& p : params)
        if (p.code == code) return p;
    throw ConfigError("unknown load code: " + code);
}

namespace {

long to_samples(double duration_s, double period, const char* which) {
    if (duration_s <= 0.0)
        throw ConfigError(std::string(which) + " must be positive");
    const long n = std::lround(duration_s / period);
    if (n < 1)
        throw ConfigError(std::string(which) + " (" + std::to_string(duration_s) +
                          " s) is shorter than one sample at period " +
                          std::to_string(period) + " s");
    return n;
}

}  // namespace

ActivationProfile extract_activation_profile(const SignalSeries& x,
                                             const LoadParams& p) {
    const long n_on = to_samples(p.n_on_s, x.sample_period, "N_on");
    const long n_off = to_samples(p.n_off_s, x.sample_period, "N_off");
    const long n = static_cast<long>(x.samples.size());

    // run_on[i]: consecutive samples >= p_on starting at i (run_off likewise).
    // The on condition at i is certified iff run_on[i] >= n_on; since a run
    // cannot extend past the end, truncated look-ahead windows certify nothing.
    std::vector<long> run_on(n, 0), run_off(n, 0);
    for (long i = n - 1; i >= 0; --i) {
        const double v = x.samples[i];
        run_on[i] = v >= p.p_on ? (i + 1 < n ? run_on[i + 1] : 0) + 1 : 0;
        run_off[i] = v <= p.p_off ? (i + 1 < n ? run_off[i + 1] : 0) + 1 : 0;
    }

    ActivationProfile out;
    out.load_id = p.code;
    out.states.resize(n);
    uint8_t prev = 0;  // initial state is off
    for (long i = 0; i < n; ++i) {
        if (run_on[i] >= n_on)
            prev = 1;  // on condition wins when both hold
        else if (run_off[i] >= n_off)
            prev = 0;
        out.states[i] = prev;
    }
    return out;
}

SignalSeries forward_fill_resample(const SignalSeries& s, double target_period) {
    if (target_period <= 0.0)
        throw ConfigError("forward_fill_resample: target period must be positive");
    const double ratio = s.sample_period / target_period;
    const long factor = std::lround(ratio);
    if (factor < 1 || std::abs(ratio - static_cast<double>(factor)) > 1e-9 * ratio)
        throw ConfigError("forward_fill_resample: target period must divide the "
                          "source period by an integer factor");
    SignalSeries out;
    out.sample_period = target_period;
    out.start_time = s.start_time;
    out.samples.reserve(s.samples.size() * factor);
    for (double v : s.samples)
        for (long q = 0; q < factor; ++q) out.samples.push_back(v);
    return out;
}

ActivationProfile forward_fill_resample(const ActivationProfile& p, int factor) {
    if (factor < 1)
        throw ConfigError("forward_fill_resample: factor must be >= 1");
    ActivationProfile out;
    out.load_id = p.load_id;
    out.states.reserve(p.states.size() * factor);
    for (uint8_t v : p.states)
        for (int q = 0; q < factor; ++q) out.states.push_back(v);
    return out;
}

Standardizer Standardizer::fit(const std::vector<double>& values) {
    if (values.empty()) throw ConfigError("Standardizer: empty fit set");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    if (var == 0.0)
        throw ConfigError("Standardizer: zero variance on the training fold");
    return {mean, std::sqrt(var)};
}

SegmentSet make_segments(const SignalSeries& x, const ActivationProfile& w,
                         int window, const Standardizer& standardizer,
                         Fold fold) {
    if (x.samples.size() != w.states.size())
        throw ShapeError("make_segments: signal and profile lengths differ");
    if (window < 1) throw ConfigError("make_segments: window must be >= 1");
    const size_t n = x.samples.size();
    const size_t count = n / static_cast<size_t>(window);
    if (count == 0)
        throw DataError("make_segments: series shorter than one window (" +
                        std::to_string(n) + " < " + std::to_string(window) + ")");
    SegmentSet out;
    out.window = window;
    out.fold = fold;
    out.inputs.reserve(count);
    out.targets.reserve(count);
    for (size_t s = 0; s < count; ++s) {
        const size_t off = s * static_cast<size_t>(window);
        std::vector<double> in(window);
        std::vector<uint8_t> tg(window);
        for (int i = 0; i < window; ++i) {
            in[i] = standardizer.apply(x.samples[off + i]);
            tg[i] = w.states[off + i];
        }
        out.inputs.push_back(std::move(in));
        out.targets.push_back(std::move(tg));
    }
    return out;
}

IngestResult ingest_csv(const std::string& path, double max_gap_seconds) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open signal file: " + path);

    std::vector<double> ts, val;
    IngestReport rep;
    std::string line;
    size_t lineno = 0;
    bool first_content = true;
    constexpr size_t kBadRowLimit = 10;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const bool may_be_header = first_content;
        first_content = false;
        const auto f = split_fields(line);
        double t, v;
        if (f.size() < 2 || !parse_double(f[0], t) || !parse_double(f[1], v)) {
            if (may_be_header) continue;
            if (++rep.bad_rows > kBadRowLimit)
                throw DataError(path + ": more than " +
                                std::to_string(kBadRowLimit) +
                                " unparseable rows (first block near line " +
                                std::to_string(lineno) + ")");
            continue;
        }
        if (!ts.empty() && t <= ts.back())
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": non-monotone timestamp");
        ts.push_back(t);
        val.push_back(v);
        ++rep.rows;
    }
    if (ts.empty()) throw DataError(path + ": no data rows");

    double period = 1.0;
    if (ts.size() > 1) {
        period = ts[1] - ts[0];
        for (size_t i = 2; i < ts.size(); ++i)
            period = std::min(period, ts[i] - ts[i - 1]);
    }

    IngestResult res;
    SignalSeries cur;
    cur.sample_period = period;
    cur.start_time = ts[0];
    cur.samples.push_back(val[0]);
    for (size_t i = 1; i < ts.size(); ++i) {
        const double gap = ts[i] - ts[i - 1];
        const long steps = std::lround(gap / period);
        if (std::abs(gap - static_cast<double>(steps) * period) > 1e-3 * period)
            throw DataError(path + ": timestamp " + std::to_string(ts[i]) +
                            " is off the sampling grid (period " +
                            std::to_string(period) + " s)");
        if (steps > 1) {
            if (gap <= max_gap_seconds) {
                for (long q = 1; q < steps; ++q)
                    cur.samples.push_back(cur.samples.back());
                ++rep.gaps_filled;
                rep.samples_filled += static_cast<size_t>(steps - 1);
            } else {
                res.series.push_back(std::move(cur));
                ++rep.splits;
                cur = SignalSeries{};
                cur.sample_period = period;
                cur.start_time = ts[i];
            }
        }
        cur.samples.push_back(val[i]);
    }
    res.series.push_back(std::move(cur));
    rep.span_seconds = ts.back() - ts.front() + period;
    res.report = rep;
    return res;
}

namespace {

void write_rows(const std::string& path, double start, double period,
                const std::vector<double>& values, int precision) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write file: " + path);
    out.precision(precision);
    for (size_t i = 0; i < values.size(); ++i)
        out << start + static_cast<double>(i) * period << ',' << values[i] << '\n';
    if (!out) throw DataError("write failed: " + path);
}

}  // namespace

void write_signal_csv(const std::string& path, const SignalSeries& s) {
    write_rows(path, s.start_time, s.sample_period, s.samples, 10);
}

void write_profile_csv(const std::string& path, const ActivationProfile& p,
                       double start_time, double sample_period) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write file: " + path);
    out.precision(10);
    for (size_t i = 0; i < p.states.size(); ++i)
        out << start_time + static_cast<double>(i) * sample_period << ','
            << static_cast<int>(p.states[i]) << '\n';
    if (!out) throw DataError("write failed: " + path);
}

ActivationProfile read_profile_csv(const std::string& path) {
    IngestResult r = ingest_csv(path, 0.0);
    if (r.series.size() != 1)
        throw DataError(path + ": activation profile must be gap-free");
    ActivationProfile p;
    p.states.reserve(r.series[0].samples.size());
    for (double v : r.series[0].samples) {
        if (v != 0.0 && v != 1.0)
            throw DataError(path + ": profile states must be 0 or 1");
        p.states.push_back(static_cast<uint8_t>(v));
    }
    return p;
}

SynthConfig SynthConfig::default_household() {
    SynthConfig cfg;
    cfg.hours = 48.0;
    cfg.baseline_w = 100.0;
    cfg.noise_sigma_w = 5.0;

    ApplianceSpec fridge;
    fridge.name = "fridge";
    fridge.kind = ApplianceSpec::Kind::periodic;
    fridge.period_s = 600.0;
    fridge.duty = 0.5;
    fridge.power_w = 100.0;
    fridge.jitter_frac = 0.1;

    ApplianceSpec kettle;
    kettle.name = "kettle";
    kettle.kind = ApplianceSpec::Kind::sparse_spike;
    kettle.mean_gap_s = 7200.0;
    kettle.duration_s = 120.0;
    kettle.power_w = 2000.0;

    ApplianceSpec washer;
    washer.name = "washer";
    washer.kind = ApplianceSpec::Kind::multi_phase;
    washer.mean_gap_s = 28800.0;
    washer.phases = {{1200.0, 400.0}, {1800.0, 150.0}, {600.0, 800.0}};

    cfg.appliances = {fridge, kettle, washer};
    return cfg;
}

namespace {

double exp_draw(Rng& rng, double mean) {
    double u = rng.uniform01();
    while (u <= 0.0) u = rng.uniform01();
    return -mean * std::log(u);
}

std::vector<double> render_appliance(const ApplianceSpec& a, size_t n,
                                     double period, Rng& rng) {
    std::vector<double> trace(n, 0.0);
    const auto fill = [&](double from_s, double dur_s, double watts) {
        const long i0 = std::max<long>(0, std::lround(from_s / period));
        const long i1 = std::min<long>(static_cast<long>(n),
                                       std::lround((from_s + dur_s) / period));
        for (long i = i0; i < i1; ++i) trace[static_cast<size_t>(i)] = watts;
    };
    const double total_s = static_cast<double>(n) * period;

    switch (a.kind) {
        case ApplianceSpec::Kind::periodic: {
            const double on_s = a.period_s * a.duty;
            const double off_s = a.period_s - on_s;
            double t = rng.uniform(0.0, a.period_s);  // random initial phase
            while (t < total_s) {
                const double j_on = 1.0 + a.jitter_frac * rng.uniform(-1.0, 1.0);
                const double j_off = 1.0 + a.jitter_frac * rng.uniform(-1.0, 1.0);
                fill(t, on_s * j_on, a.power_w);
                t += on_s * j_on + off_s * j_off;
            }
            break;
        }
        case ApplianceSpec::Kind::sparse_spike: {
            double t = exp_draw(rng, a.mean_gap_s);
            while (t < total_s) {
                const double dur = a.duration_s * (1.0 + 0.2 * rng.uniform(-1.0, 1.0));
                fill(t, dur, a.power_w);
                t += dur + exp_draw(rng, a.mean_gap_s);
            }
            break;
        }
        case ApplianceSpec::Kind::multi_phase: {
            double t = exp_draw(rng, a.mean_gap_s);
            while (t < total_s) {
                for (const AppliancePhase& ph : a.phases) {
                    fill(t, ph.duration_s, ph.power_w);
                    t += ph.duration_s;
                }
                t += exp_draw(rng, a.mean_gap_s);
            }
            break;
        }
    }
    return trace;
}

}  // namespace

SynthHousehold synth_household(const SynthConfig& cfg, uint64_t seed) {
    const size_t n = static_cast<size_t>(
        std::llround(cfg.hours * 3600.0 / cfg.sample_period));
    Rng rng(seed);

    SynthHousehold out;
    out.aggregate.sample_period = cfg.sample_period;
    out.aggregate.start_time = cfg.start_time;
    out.aggregate.samples.assign(n, cfg.baseline_w);

    for (const ApplianceSpec& a : cfg.appliances) {
        SignalSeries load;
        load.sample_period = cfg.sample_period;
        load.start_time = cfg.start_time;
        load.samples = render_appliance(a, n, cfg.sample_period, rng);
        for (size_t i = 0; i < n; ++i)
            out.aggregate.samples[i] += load.samples[i];
        out.loads.emplace_back(a.name, std::move(load));
    }

    if (cfg.noise_sigma_w > 0.0)
        for (size_t i = 0; i < n; ++i)
            out.aggregate.samples[i] += rng.normal(0.0, cfg.noise_sigma_w);
    return out;
}

}  // namespace disagg

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "disagg/errors.hpp"

namespace disagg {

/// Uniformly sampled real-power trace in watts.
struct SignalSeries {
    std::vector<double> samples;
    double sample_period = 1.0;  // seconds
    double start_time = 0.0;     // unix seconds

    size_t size() const { return samples.size(); }
    bool has_negatives() const;
};

/// Binary on/off sequence aligned 1:1 with a SignalSeries.
struct ActivationProfile {
    std::vector<uint8_t> states;
    std::string load_id;

    size_t size() const { return states.size(); }
    double on_fraction() const;
    /// Number of off->on transitions (a leading on counts as one).
    size_t activation_count() const;
};

/// Threshold/hold parameters of the ground-truth estimator. Durations are in
/// seconds and are converted to whole sample counts at the signal's rate by
/// rounding to nearest; a duration that rounds below one sample is an error.
struct LoadParams {
    std::string code;
    double p_on = 0.0;   // watts
    double p_off = 0.0;  // watts
    double n_on_s = 1.0;
    double n_off_s = 1.0;
};

/// Built-in parameter set for the ten stock load categories.
const std::vector<LoadParams>& default_load_params();

std::vector<LoadParams> read_load_params(const std::string& path);

const LoadParams& find_load(const std::vector<LoadParams>& params,
                            const std::string& code);

/// Three-case estimator: on when the power stays >= p_on for n_on samples,
/// off when it stays <= p_off for n_off samples, otherwise the previous state
/// (off before the first sample). When fewer samples than the look-ahead
/// remain, neither condition can be certified and the state holds.
ActivationProfile extract_activation_profile(const SignalSeries& x,
                                             const LoadParams& p);

/// Integer-factor upsampling by repeating each value (forward fill).
SignalSeries forward_fill_resample(const SignalSeries& s, double target_period);
ActivationProfile forward_fill_resample(const ActivationProfile& p, int factor);

/// Affine input scaling fitted on the training fold only.
struct Standardizer {
    double mean = 0.0;
    double stddev = 1.0;

    static Standardizer fit(const std::vector<double>& values);
    double apply(double v) const { return (v - mean) / stddev; }
    double invert(double v) const { return v * stddev + mean; }
};

enum class Fold { train, val, eval };

/// Non-overlapping contiguous window pairs starting at offset 0; the tail of
/// fewer than `window` samples is discarded.
struct SegmentSet {
    int window = 0;
    Fold fold = Fold::train;
    std::vector<std::vector<double>> inputs;    // standardized
    std::vector<std::vector<uint8_t>> targets;

    size_t size() const { return inputs.size(); }
};

SegmentSet make_segments(const SignalSeries& x, const ActivationProfile& w,
                         int window, const Standardizer& standardizer,
                         Fold fold = Fold::train);

struct IngestReport {
    size_t rows = 0;
    size_t bad_rows = 0;
    size_t gaps_filled = 0;
    size_t samples_filled = 0;
    size_t splits = 0;
    double span_seconds = 0.0;
};

struct IngestResult {
    std::vector<SignalSeries> series;
    IngestReport report;
};

/// Reads (unix_timestamp, watts) rows, comma- or whitespace-delimited. Gaps
/// up to max_gap_seconds are forward-filled; longer gaps split the series.
IngestResult ingest_csv(const std::string& path, double max_gap_seconds = 180.0);

void write_signal_csv(const std::string& path, const SignalSeries& s);

void write_profile_csv(const std::string& path, const ActivationProfile& p,
                       double start_time, double sample_period);
ActivationProfile read_profile_csv(const std::string& path);

// --- synthetic household -------------------------------------------------

struct AppliancePhase {
    double duration_s = 0.0;
    double power_w = 0.0;
};

struct ApplianceSpec {
    enum class Kind { periodic, sparse_spike, multi_phase };
    std::string name;
    Kind kind = Kind::periodic;

    // periodic (fridge-like)
    double period_s = 600.0;
    double duty = 0.5;
    double power_w = 100.0;
    double jitter_frac = 0.0;  // +-fractional jitter on each on/off span

    // sparse_spike (kettle-like) and multi_phase (washer-like)
    double mean_gap_s = 7200.0;
    double duration_s = 120.0;
    std::vector<AppliancePhase> phases;  // multi_phase only
};

struct SynthConfig {
    double hours = 48.0;
    double sample_period = 1.0;
    double baseline_w = 100.0;
    double noise_sigma_w = 0.0;
    double start_time = 0.0;
    std::vector<ApplianceSpec> appliances;

    /// One fridge-like, one kettle-like and one washer-like load over a
    /// 100 W baseline with 5 W sensor noise.
    static SynthConfig default_household();
};

struct SynthHousehold {
    SignalSeries aggregate;
    std::vector<std::pair<std::string, SignalSeries>> loads;
};

/// aggregate = sum of per-load traces + baseline + Gaussian sensor noise.
SynthHousehold synth_household(const SynthConfig& cfg, uint64_t seed);

}  // namespace disagg

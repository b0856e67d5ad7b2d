#pragma once

#include <cmath>

#include "disagg/dataio.hpp"
#include "disagg/rng.hpp"

// Independent brute-force simulator of the threshold/hold estimator: scans
// the full look-ahead window at every sample, exactly as the rule is stated.
// Deliberately naive; used only to validate dataio::extract_activation_profile.
namespace testref {

inline disagg::ActivationProfile brute_force_profile(
    const disagg::SignalSeries& x, const disagg::LoadParams& p) {
    const long n_on = std::lround(p.n_on_s / x.sample_period);
    const long n_off = std::lround(p.n_off_s / x.sample_period);
    const long n = static_cast<long>(x.samples.size());

    disagg::ActivationProfile out;
    out.load_id = p.code;
    out.states.resize(n);
    int prev = 0;
    for (long i = 0; i < n; ++i) {
        bool on_ok = i + n_on <= n;  // window must fit entirely
        for (long k = i; on_ok && k < i + n_on; ++k)
            on_ok = x.samples[k] >= p.p_on;
        bool off_ok = i + n_off <= n;
        for (long k = i; off_ok && k < i + n_off; ++k)
            off_ok = x.samples[k] <= p.p_off;
        if (on_ok)
            prev = 1;
        else if (off_ok)
            prev = 0;
        out.states[i] = prev;
    }
    return out;
}

// Square wave with random plateau lengths and levels around the threshold,
// including the exact threshold value so ties get exercised.
inline disagg::SignalSeries random_square_wave(disagg::Rng& rng, size_t length,
                                               double threshold) {
    disagg::SignalSeries s;
    s.sample_period = 1.0;
    s.samples.reserve(length);
    while (s.samples.size() < length) {
        const double levels[5] = {0.0, 0.5 * threshold, threshold,
                                  1.5 * threshold, 3.0 * threshold};
        const double level = levels[rng.below(5)];
        const size_t span = 1 + static_cast<size_t>(rng.below(120));
        for (size_t i = 0; i < span && s.samples.size() < length; ++i)
            s.samples.push_back(level);
    }
    return s;
}

}  // namespace testref

#include "disagg/metrics.hpp"

#include <cmath>
#include <sstream>

#include "disagg/errors.hpp"

namespace disagg {

ContingencyTable tabulate(const std::vector<uint8_t>& predicted,
                          const std::vector<uint8_t>& truth) {
    if (predicted.size() != truth.size())
        throw ShapeError("tabulate: profile length mismatch (" +
                         std::to_string(predicted.size()) + " vs " +
                         std::to_string(truth.size()) + ")");
    ContingencyTable t;
    for (size_t i = 0; i < truth.size(); ++i) {
        if (truth[i]) {
            if (predicted[i]) ++t.tp; else ++t.fn;
        } else {
            if (predicted[i]) ++t.fp; else ++t.tn;
        }
    }
    return t;
}

namespace {

Metric ratio(long long num, long long den) {
    if (den == 0) return {0.0, false};
    return {static_cast<double>(num) / static_cast<double>(den), true};
}

Metric sum_minus_one(const Metric& a, const Metric& b) {
    if (!a.defined || !b.defined) return {0.0, false};
    return {a.value + b.value - 1.0, true};
}

}  // namespace

MetricReport compute_report(const ContingencyTable& t) {
    if (t.n() < 1) throw ConfigError("compute_report: empty table");
    MetricReport r;
    r.table = t;
    r.accuracy = ratio(t.tp + t.tn, t.n());
    r.tpa = ratio(t.tp, t.pred_pos());
    r.tpr = ratio(t.tp, t.real_pos());
    r.tna = ratio(t.tn, t.pred_neg());
    r.tnr = ratio(t.tn, t.real_neg());
    r.f1 = ratio(2 * t.tp, 2 * t.tp + t.fn + t.fp);
    r.informedness = sum_minus_one(r.tpr, r.tnr);
    r.markedness = sum_minus_one(r.tpa, r.tna);
    r.rn = ratio(t.real_neg(), t.n());

    if (r.informedness.defined && r.markedness.defined) {
        r.bm = {r.informedness.value * r.markedness.value, true};
        // Signed contingency form; equals sqrt(B*M) in magnitude but carries
        // the sign, so worse-than-chance predictors come out negative. The
        // denominator is factored to avoid integer overflow on large folds.
        const double num = static_cast<double>(t.tp) * static_cast<double>(t.tn) -
                           static_cast<double>(t.fp) * static_cast<double>(t.fn);
        const double den = std::sqrt(static_cast<double>(t.pred_pos())) *
                           std::sqrt(static_cast<double>(t.real_pos())) *
                           std::sqrt(static_cast<double>(t.real_neg())) *
                           std::sqrt(static_cast<double>(t.pred_neg()));
        r.mcc = {num / den, true};
    }
    return r;
}

std::pair<MetricReport, MetricReport> trivial_classifier_audit(double rn,
                                                               long long n) {
    if (!(rn > 0.0 && rn < 1.0))
        throw ConfigError("trivial_classifier_audit: rn must be in (0, 1)");
    if (n < 2) throw ConfigError("trivial_classifier_audit: need n >= 2");
    const long long neg = std::llround(rn * static_cast<double>(n));
    const long long pos = n - neg;
    if (neg == 0 || pos == 0)
        throw ConfigError("trivial_classifier_audit: rn*n rounds to a one-class fold");

    ContingencyTable always_negative{0, pos, 0, neg};
    ContingencyTable always_positive{pos, 0, neg, 0};
    return {compute_report(always_negative), compute_report(always_positive)};
}

namespace {

std::string fmt(const Metric& m) {
    if (!m.defined) return "undef";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", m.value);
    return buf;
}

}  // namespace

std::string format_report_row(const MetricReport& r, bool with_header) {
    std::ostringstream os;
    if (with_header) os << "rn\tTPA\tTPR\tB\tM\tf1\tMCC\n";
    os << fmt(r.rn) << '\t' << fmt(r.tpa) << '\t' << fmt(r.tpr) << '\t'
       << fmt(r.informedness) << '\t' << fmt(r.markedness) << '\t' << fmt(r.f1)
       << '\t' << fmt(r.mcc) << '\n';
    return os.str();
}

std::string format_report_kv(const MetricReport& r) {
    std::ostringstream os;
    const auto put = [&os](const char* key, const Metric& m) {
        os << key << " = " << fmt(m) << '\n';
    };
    os << "tp = " << r.table.tp << '\n';
    os << "fn = " << r.table.fn << '\n';
    os << "fp = " << r.table.fp << '\n';
    os << "tn = " << r.table.tn << '\n';
    os << "n = " << r.table.n() << '\n';
    put("rn", r.rn);
    put("accuracy", r.accuracy);
    put("precision_tpa", r.tpa);
    put("recall_tpr", r.tpr);
    put("inverse_precision_tna", r.tna);
    put("inverse_recall_tnr", r.tnr);
    put("informedness_b", r.informedness);
    put("markedness_m", r.markedness);
    put("f1", r.f1);
    put("mcc", r.mcc);
    put("b_times_m", r.bm);
    return os.str();
}

}  // namespace disagg

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace disagg {

/// Raw counts of a binary contingency table; the positive class is "on".
/// Tables merge by addition, so per-chunk tabulation reduces exactly.
struct ContingencyTable {
    long long tp = 0;
    long long fn = 0;
    long long fp = 0;
    long long tn = 0;

    long long n() const { return tp + fn + fp + tn; }
    long long real_pos() const { return tp + fn; }
    long long real_neg() const { return fp + tn; }
    long long pred_pos() const { return tp + fp; }
    long long pred_neg() const { return fn + tn; }

    ContingencyTable& operator+=(const ContingencyTable& o) {
        tp += o.tp;
        fn += o.fn;
        fp += o.fp;
        tn += o.tn;
        return *this;
    }
};

/// A metric value plus whether its denominator was nonzero. Undefined values
/// are never silently substituted with 0.
struct Metric {
    double value = 0.0;
    bool defined = false;
};

struct MetricReport {
    ContingencyTable table;
    Metric accuracy;
    Metric tpa;  // precision
    Metric tpr;  // recall
    Metric tna;  // inverse precision
    Metric tnr;  // inverse recall
    Metric f1;
    Metric informedness;  // B = TPR + TNR - 1
    Metric markedness;    // M = TPA + TNA - 1
    Metric mcc;           // signed contingency formula; MCC^2 = B*M
    Metric bm;            // the product B*M, reported alongside
    Metric rn;            // negative-class prevalence RN / N
};

ContingencyTable tabulate(const std::vector<uint8_t>& predicted,
                          const std::vector<uint8_t>& truth);

MetricReport compute_report(const ContingencyTable& t);

/// Reports for the two constant predictors (always-negative, always-positive)
/// at negative-class prevalence `rn` over `n` samples.
std::pair<MetricReport, MetricReport> trivial_classifier_audit(double rn,
                                                               long long n);

/// One header plus one value row, tab-delimited, columns
/// rn TPA TPR B M f1 MCC. Undefined entries print as "undef".
std::string format_report_row(const MetricReport& r, bool with_header = true);

/// Flat key = value document with every metric, flag and raw count.
std::string format_report_kv(const MetricReport& r);

}  // namespace disagg

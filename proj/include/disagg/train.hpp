#pragma once

#include <map>
#include <string>
#include <vector>

#include "disagg/dataio.hpp"
#include "disagg/model.hpp"

namespace disagg {

template <typename T>
struct BceResult {
    double total = 0.0;  // summed over batch and time
    double mean = 0.0;   // per-element average, for logging
    Tensor3<T> grad;     // d total / d posterior
};

/// Binary cross-entropy -sum[w ln g + (1-w) ln(1-g)] with g clamped to
/// [eps_log, 1-eps_log] before the logs. The clamp is straight-through for
/// the gradient so saturated outputs keep a restoring force.
template <typename T>
BceResult<T> bce_loss(const Tensor3<T>& posterior, const Tensor3<T>& target,
                      double eps_log = 1e-7);

struct NadamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    bool nesterov = true;
    // psi in the momentum schedule mu_t = beta1 * (1 - 0.5 * 0.96^(t*psi))
    double momentum_decay = 0.004;
};

/// ADAM update with Nesterov momentum. With nesterov disabled this is plain
/// bias-corrected Adam.
template <typename T>
class Nadam {
  public:
    explicit Nadam(NadamConfig cfg = {}) : cfg_(cfg) {}

    const NadamConfig& config() const { return cfg_; }
    long long step_count() const { return t_; }

    /// One update over the whole parameter set. Throws NumericError on any
    /// non-finite gradient before touching the parameters.
    void step(const std::vector<typename Model<T>::ParamView>& params);

    std::map<std::string, std::vector<T>> export_state() const;
    void import_state(const std::map<std::string, std::vector<T>>& state);

  private:
    NadamConfig cfg_;
    long long t_ = 0;
    double mu_product_ = 1.0;
    std::vector<std::vector<T>> m_, v_;
};

struct TrainRunConfig {
    int batch_size = 16;
    int epochs = 50;
    uint64_t seed = 0;
    double eps_log = 1e-7;
    int patience = 5;      // early stop after this many validations w/o improvement
    int val_cadence = 1;   // epochs between validation passes
    NadamConfig optimizer;

    void validate() const;
};

struct TrainHistory {
    struct Row {
        int epoch = 0;
        double train_loss = 0.0;  // per-element mean over the epoch
        double val_loss = 0.0;    // NaN when no validation ran this epoch
        double wall_seconds = 0.0;
    };
    std::vector<Row> rows;
    int best_epoch = -1;
    double best_val_loss = 0.0;

    /// Delimited text log: epoch, train loss, validation loss, wall time.
    std::string to_log() const;
};

/// Packs `count` segments starting at `first` into (count, 1, window) pairs.
template <typename T>
void pack_batch(const SegmentSet& set, const std::vector<size_t>& order,
                size_t first, size_t count, Tensor3<T>& x, Tensor3<T>& target);

/// Epochs of seeded-shuffle mini-batches: train-mode forward (noise on),
/// bce_loss, backward, NAdam update. Validation runs in infer mode. The model
/// is left at the best-validation parameter state. On a non-finite loss the
/// model is restored to that state and NumericError is thrown.
template <typename T>
TrainHistory train_loop(Model<T>& model, const SegmentSet& train_set,
                        const SegmentSet& val_set, const TrainRunConfig& cfg,
                        Nadam<T>* optimizer = nullptr);

}  // namespace disagg

#include "disagg/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace disagg {

template <typename T>
BceResult<T> bce_loss(const Tensor3<T>& posterior, const Tensor3<T>& target,
                      double eps_log) {
    require_same_shape(posterior, target, "bce_loss");
    if (!(eps_log > 0.0 && eps_log <= 1e-3))
        throw ConfigError("bce_loss: eps_log must be in (0, 1e-3]");

    BceResult<T> r;
    r.grad = Tensor3<T>(posterior.batch, posterior.channels, posterior.length);
    const double lo = eps_log, hi = 1.0 - eps_log;
    double total = 0.0;
    for (size_t i = 0; i < posterior.size(); ++i) {
        const double g = std::clamp(static_cast<double>(posterior.data[i]), lo, hi);
        const double w = static_cast<double>(target.data[i]);
        total -= w * std::log(g) + (1.0 - w) * std::log(1.0 - g);
        r.grad.data[i] = static_cast<T>(-(w / g - (1.0 - w) / (1.0 - g)));
    }
    r.total = total;
    r.mean = total / static_cast<double>(posterior.size());
    return r;
}

template BceResult<float> bce_loss<float>(const Tensor3<float>&,
                                          const Tensor3<float>&, double);
template BceResult<double> bce_loss<double>(const Tensor3<double>&,
                                            const Tensor3<double>&, double);

template <typename T>
void Nadam<T>::step(const std::vector<typename Model<T>::ParamView>& params) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].size, T(0));
            v_[i].assign(params[i].size, T(0));
        }
    }
    if (m_.size() != params.size())
        throw ShapeError("Nadam::step: parameter set changed size");

    for (size_t i = 0; i < params.size(); ++i) {
        if (m_[i].size() != params[i].size)
            throw ShapeError("Nadam::step: parameter '" + params[i].name +
                             "' changed shape");
        for (size_t j = 0; j < params[i].size; ++j)
            if (!std::isfinite(static_cast<double>(params[i].grad[j])))
                throw NumericError("non-finite gradient in '" + params[i].name +
                                   "'; update aborted");
    }

    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));

    double mu_t = 0.0, mu_next = 0.0, denom_t = 1.0, denom_next = 1.0;
    if (cfg_.nesterov) {
        mu_t = b1 * (1.0 - 0.5 * std::pow(0.96, static_cast<double>(t_) *
                                                    cfg_.momentum_decay));
        mu_next = b1 * (1.0 - 0.5 * std::pow(0.96, static_cast<double>(t_ + 1) *
                                                       cfg_.momentum_decay));
        mu_product_ *= mu_t;
        denom_t = 1.0 - mu_product_;
        denom_next = 1.0 - mu_product_ * mu_next;
    } else {
        denom_t = 1.0 - std::pow(b1, static_cast<double>(t_));
    }

    for (size_t i = 0; i < params.size(); ++i) {
        T* value = params[i].value;
        const T* grad = params[i].grad;
        T* m = m_[i].data();
        T* v = v_[i].data();
        for (size_t j = 0; j < params[i].size; ++j) {
            const double g = static_cast<double>(grad[j]);
            const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * g;
            const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * g * g;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            const double v_hat = vj / bc2;
            double m_hat;
            if (cfg_.nesterov)
                m_hat = mu_next * mj / denom_next + (1.0 - mu_t) * g / denom_t;
            else
                m_hat = mj / denom_t;
            value[j] = static_cast<T>(
                static_cast<double>(value[j]) -
                cfg_.learning_rate * m_hat / (std::sqrt(v_hat) + cfg_.eps));
        }
    }
}

template <typename T>
std::map<std::string, std::vector<T>> Nadam<T>::export_state() const {
    std::map<std::string, std::vector<T>> out;
    out["opt.t"] = {static_cast<T>(t_)};
    out["opt.mu_product"] = {static_cast<T>(mu_product_)};
    for (size_t i = 0; i < m_.size(); ++i) {
        out["opt.m." + std::to_string(i)] = m_[i];
        out["opt.v." + std::to_string(i)] = v_[i];
    }
    return out;
}

template <typename T>
void Nadam<T>::import_state(const std::map<std::string, std::vector<T>>& state) {
    const auto t_it = state.find("opt.t");
    const auto mu_it = state.find("opt.mu_product");
    if (t_it == state.end() || mu_it == state.end() || t_it->second.size() != 1 ||
        mu_it->second.size() != 1)
        throw DataError("Nadam::import_state: missing step counter state");
    t_ = static_cast<long long>(t_it->second[0]);
    mu_product_ = static_cast<double>(mu_it->second[0]);
    m_.clear();
    v_.clear();
    for (size_t i = 0;; ++i) {
        const auto m_it = state.find("opt.m." + std::to_string(i));
        const auto v_it = state.find("opt.v." + std::to_string(i));
        if (m_it == state.end() && v_it == state.end()) break;
        if (m_it == state.end() || v_it == state.end() ||
            m_it->second.size() != v_it->second.size())
            throw DataError("Nadam::import_state: inconsistent moment tensors");
        m_.push_back(m_it->second);
        v_.push_back(v_it->second);
    }
}

template class Nadam<float>;
template class Nadam<double>;

void TrainRunConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (!(eps_log > 0.0 && eps_log <= 1e-3))
        throw ConfigError("eps_log must be in (0, 1e-3]");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (val_cadence < 1) throw ConfigError("val_cadence must be >= 1");
}

std::string TrainHistory::to_log() const {
    std::ostringstream os;
    os << "epoch\ttrain_loss\tval_loss\twall_s\n";
    for (const Row& r : rows) {
        os << r.epoch << '\t';
        char buf[96];
        if (std::isnan(r.val_loss))
            std::snprintf(buf, sizeof(buf), "%.9g\t-\t%.3f", r.train_loss,
                          r.wall_seconds);
        else
            std::snprintf(buf, sizeof(buf), "%.9g\t%.9g\t%.3f", r.train_loss,
                          r.val_loss, r.wall_seconds);
        os << buf << '\n';
    }
    return os.str();
}

template <typename T>
void pack_batch(const SegmentSet& set, const std::vector<size_t>& order,
                size_t first, size_t count, Tensor3<T>& x, Tensor3<T>& target) {
    const int window = set.window;
    x = Tensor3<T>(static_cast<int>(count), 1, window);
    target = Tensor3<T>(static_cast<int>(count), 1, window);
    for (size_t b = 0; b < count; ++b) {
        const size_t s = order[first + b];
        const std::vector<double>& in = set.inputs[s];
        const std::vector<uint8_t>& tg = set.targets[s];
        T* xr = x.row(static_cast<int>(b), 0);
        T* tr = target.row(static_cast<int>(b), 0);
        for (int i = 0; i < window; ++i) {
            xr[i] = static_cast<T>(in[i]);
            tr[i] = static_cast<T>(tg[i]);
        }
    }
}

template void pack_batch<float>(const SegmentSet&, const std::vector<size_t>&,
                                size_t, size_t, Tensor3<float>&, Tensor3<float>&);
template void pack_batch<double>(const SegmentSet&, const std::vector<size_t>&,
                                 size_t, size_t, Tensor3<double>&, Tensor3<double>&);

namespace {

template <typename T>
double evaluate_loss(Model<T>& model, const SegmentSet& set, int batch_size,
                     double eps_log) {
    std::vector<size_t> order(set.size());
    std::iota(order.begin(), order.end(), size_t{0});
    double total = 0.0;
    size_t elements = 0;
    for (size_t first = 0; first < order.size(); first += batch_size) {
        const size_t count = std::min<size_t>(batch_size, order.size() - first);
        Tensor3<T> x, target;
        pack_batch(set, order, first, count, x, target);
        const Tensor3<T> posterior = model.forward(x, Phase::infer);
        const BceResult<T> r = bce_loss(posterior, target, eps_log);
        total += r.total;
        elements += posterior.size();
    }
    return total / static_cast<double>(elements);
}

}  // namespace

template <typename T>
TrainHistory train_loop(Model<T>& model, const SegmentSet& train_set,
                        const SegmentSet& val_set, const TrainRunConfig& cfg,
                        Nadam<T>* optimizer) {
    cfg.validate();
    if (train_set.size() == 0) throw DataError("train_loop: empty training set");

    Nadam<T> local_opt(cfg.optimizer);
    Nadam<T>& opt = optimizer ? *optimizer : local_opt;

    TrainHistory hist;
    Rng shuffle_rng(cfg.seed);
    std::vector<size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), size_t{0});

    std::vector<std::vector<T>> best_state = model.save_state();
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int stale_validations = 0;

    const auto t0 = std::chrono::steady_clock::now();
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_total = 0.0;
        size_t epoch_elements = 0;
        for (size_t first = 0; first < order.size();
             first += static_cast<size_t>(cfg.batch_size)) {
            const size_t count =
                std::min<size_t>(cfg.batch_size, order.size() - first);
            Tensor3<T> x, target;
            pack_batch(train_set, order, first, count, x, target);
            const Tensor3<T> posterior = model.forward(x, Phase::train);
            const BceResult<T> r = bce_loss(posterior, target, cfg.eps_log);
            if (!std::isfinite(r.total)) {
                model.load_state(best_state);
                throw NumericError(
                    "train_loop: non-finite loss at epoch " +
                    std::to_string(epoch) +
                    "; model restored to the last good state");
            }
            epoch_total += r.total;
            epoch_elements += posterior.size();
            model.zero_grad();
            model.backward(r.grad);
            opt.step(model.trainable_params());
        }

        TrainHistory::Row row;
        row.epoch = epoch;
        row.train_loss = epoch_total / static_cast<double>(epoch_elements);
        row.val_loss = std::numeric_limits<double>::quiet_NaN();

        const bool validate_now =
            val_set.size() > 0 &&
            (epoch % cfg.val_cadence == 0 || epoch == cfg.epochs);
        if (validate_now) {
            row.val_loss =
                evaluate_loss(model, val_set, cfg.batch_size, cfg.eps_log);
            if (!std::isfinite(row.val_loss)) {
                model.load_state(best_state);
                throw NumericError(
                    "train_loop: non-finite validation loss at epoch " +
                    std::to_string(epoch) +
                    "; model restored to the last good state");
            }
            if (row.val_loss < best_val) {
                best_val = row.val_loss;
                best_state = model.save_state();
                best_epoch = epoch;
                stale_validations = 0;
            } else {
                ++stale_validations;
            }
        } else if (val_set.size() == 0) {
            // no validation fold: the latest state is the best state
            best_state = model.save_state();
            best_epoch = epoch;
        }

        row.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                .count();
        hist.rows.push_back(row);
        model.meta.loss_history.push_back(row.train_loss);
        model.meta.epoch = epoch;

        if (val_set.size() > 0 && stale_validations >= cfg.patience) break;
    }

    model.load_state(best_state);
    hist.best_epoch = best_epoch;
    hist.best_val_loss = best_val;
    return hist;
}

template TrainHistory train_loop<float>(Model<float>&, const SegmentSet&,
                                        const SegmentSet&, const TrainRunConfig&,
                                        Nadam<float>*);
template TrainHistory train_loop<double>(Model<double>&, const SegmentSet&,
                                         const SegmentSet&, const TrainRunConfig&,
                                         Nadam<double>*);

}  // namespace disagg

#pragma once

#include "udlflow/datasets/dataset.hpp"
#include "udlflow/flows/classifier.hpp"
#include "udlflow/flows/flow_model.hpp"

#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace udlflow::train {

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t patience = 3;
    std::size_t batch_size = 16;
    std::size_t max_epochs = 200;
    double lu_reg_weight = 1e-4;
    bool dequantize = false;
    std::uint64_t seed = 0;
    double validation_fraction = 0.1;
    double clip_norm = 100.0;
    std::size_t threads = 1;

    void validate() const;
};

// lr 1e-3, patience 3.
TrainConfig veriflow_preset();
// lr 1e-5, patience 10: a conservative setting for the coupling-only baseline, which can be unstable.
TrainConfig baseline_unstable_preset();

// Coupling blocks only, standard-normal base.
flows::FlowConfig baseline_architecture(std::size_t dim, std::optional<flows::ImageShape> image, std::uint64_t seed);
radial::RadialBase standard_normal_base(std::size_t dim);
// Learnable l1 gamma mixture (3 components, shapes capped at dim).
radial::RadialBase default_veriflow_base(std::size_t dim);

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<num::Tensor> m, v;
    std::size_t t = 0;
};

// One Adam update from each parameter's grad accumulator.
void adam_step(const std::vector<ad::Parameter*>& params, AdamState& state, double lr, const AdamHyper& h = {});

// Scales every gradient so that the global norm is at most `max_norm`; returns the norm before clipping.
double clip_gradients(const std::vector<ad::Parameter*>& params, double max_norm);

// -(1/n) sum log p(x_i) + w * LU penalty. `n_total` overrides the divisor for sharded batches.
ad::Var nll_loss(flows::TraceCtx& ctx, const flows::FlowModel& model, const num::Tensor& batch, double lu_reg_weight,
                 std::optional<std::size_t> n_total = std::nullopt, bool with_penalty = true);
// Untraced mean negative log-likelihood.
double mean_nll(const flows::FlowModel& model, const num::Tensor& x);

// (pixel + u) / 256, u ~ U[0, 1). Non-integer or out-of-range pixels raise ContractError.
num::Tensor dequantize(const num::Tensor& pixels, std::mt19937_64& rng);

class EarlyStopper {
public:
    explicit EarlyStopper(std::size_t patience) : patience_(patience) {}
    // Returns true when training should stop after this epoch.
    bool update(double val_nll);
    bool improved() const { return improved_; }
    double best() const { return best_; }
    std::size_t best_epoch() const { return best_epoch_; }

private:
    std::size_t patience_;
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t best_epoch_ = 0, epoch_ = 0, stale_ = 0;
    bool improved_ = false;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_nll = 0.0;
    double val_nll = 0.0;
    double log_det = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    double initial_val_nll = 0.0;
    double best_val_nll = 0.0;
    std::size_t best_epoch = 0;
    bool diverged = false;
    std::string message;
    std::size_t skipped_steps = 0;
};

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history);

// Splits off the validation fraction with `config.seed`.
void split_train_validation(const data::Dataset& data, double fraction, std::uint64_t seed, data::Dataset& train,
                            data::Dataset& validation);

// Maximum likelihood training. The best-validation parameters are restored.
TrainResult train(flows::FlowModel& model, const data::Dataset& dataset, const TrainConfig& config);

struct ClassifierResult {
    std::vector<double> train_loss;
    double accuracy = 0.0; // on the training data
};

// Softmax cross-entropy averaged over the batch.
ad::Var cross_entropy(const ad::Var& logits, const std::vector<int>& labels);

// Adam on cross-entropy for `config.max_epochs` epochs; no early stopping.
ClassifierResult train_classifier(flows::ReluNetwork& net, const data::Dataset& dataset, const TrainConfig& config);

} // namespace udlflow::train

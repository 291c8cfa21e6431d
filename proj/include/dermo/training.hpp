#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dermo/augment.hpp"
#include "dermo/backbone.hpp"
#include "dermo/dataset.hpp"
#include "dermo/errors.hpp"
#include "dermo/loss.hpp"

namespace dermo {

struct TrainingPhase {
  GroupSet trainable_groups;
  double learning_rate;
  std::size_t max_epochs;
  std::size_t patience;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw ContractError("training phase: learning rate must be positive");
    if (max_epochs == 0) throw ContractError("training phase: max_epochs must be positive");
    if (patience == 0 || patience > max_epochs)
      throw ContractError("training phase: patience must lie in [1, max_epochs]");
    if (!trainable_groups.count(ParamGroup::kHead)) throw ContractError("training phase: the head must be trainable");
  }

  bool operator==(const TrainingPhase&) const = default;
};

struct Schedule {
  std::vector<TrainingPhase> phases;

  /// Head-only at lr 0.01 for up to 10 epochs (patience 5), then every layer
  /// at lr 0.001 for up to 100 epochs (patience 10).
  static Schedule fine_tuning_default() {
    return {{{{ParamGroup::kHead}, 0.01, 10, 5}, {{ParamGroup::kBody, ParamGroup::kHead}, 0.001, 100, 10}}};
  }

  void validate() const {
    if (phases.empty()) throw ContractError("schedule: no phases");
    for (const auto& p : phases) p.validate();
  }
};

/// Patience counter over validation losses. Epochs are 1-based.
struct EarlyStopState {
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t epochs_seen = 0;
  std::size_t epochs_since_improvement = 0;
  bool stopped = false;

  bool operator==(const EarlyStopState&) const = default;
};

/// Strict improvement (min_delta 0) resets the counter; anything else,
/// including a tie with the best, counts toward patience.
inline EarlyStopState early_stop_update(EarlyStopState state, double validation_loss, std::size_t patience) {
  if (state.stopped) throw ContractError("early_stop_update: already stopped");
  if (!std::isfinite(validation_loss)) throw NumericInputError("early_stop_update: non-finite validation loss");
  if (patience == 0) throw ContractError("early_stop_update: patience must be positive");
  ++state.epochs_seen;
  if (validation_loss < state.best_loss) {
    state.best_loss = validation_loss;
    state.best_epoch = state.epochs_seen;
    state.epochs_since_improvement = 0;
  } else {
    ++state.epochs_since_improvement;
  }
  state.stopped = state.epochs_since_improvement >= patience;
  return state;
}

struct EpochLog {
  std::size_t phase;
  std::size_t epoch;
  double train_loss;
  double validation_loss;
  double seconds;

  bool operator==(const EpochLog&) const = default;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::vector<EpochLog> log) : Error(what), log_(std::move(log)) {}
  const std::vector<EpochLog>& log() const noexcept { return log_; }

 private:
  std::vector<EpochLog> log_;
};

/// Drives `run_epoch(epoch) -> validation loss` until `max_epochs` or early
/// stop. `on_improvement(epoch)` fires whenever a new best is recorded.
template <typename RunEpoch, typename OnImprovement>
EarlyStopState run_with_early_stopping(std::size_t max_epochs, std::size_t patience, RunEpoch&& run_epoch,
                                       OnImprovement&& on_improvement) {
  EarlyStopState state;
  for (std::size_t epoch = 1; epoch <= max_epochs && !state.stopped; ++epoch) {
    const double val = run_epoch(epoch);
    state = early_stop_update(state, val, patience);
    if (state.best_epoch == epoch) on_improvement(epoch);
  }
  return state;
}

struct TrainOptions {
  std::size_t batch_size = 32;
  double momentum = 0.9;
  bool augment = true;
  /// Keep decoded, resized images in memory for the duration of a phase.
  bool cache_images = true;
  ImageLoader loader = load_record_image;
  std::function<void(const EpochLog&)> on_epoch;
};

/// Decodes and resizes records once per phase when caching is on.
class PreparedImages {
 public:
  PreparedImages(const Dataset& ds, const BackboneSpec& spec, const TrainOptions& opt)
      : spec_(spec), loader_(opt.loader), cache_(opt.cache_images) {
    if (cache_)
      for (const auto& r : ds.records()) images_.emplace(r.image_id, preprocess(loader_(r), spec_));
  }

  Image operator()(const ImageRecord& r) const {
    if (cache_) {
      if (auto it = images_.find(r.image_id); it != images_.end()) return it->second;
    }
    return preprocess(loader_(r), spec_);
  }

 private:
  BackboneSpec spec_;
  ImageLoader loader_;
  bool cache_;
  std::map<std::string, Image> images_;
};

namespace detail {

inline std::vector<LabeledLogits> to_labeled(const nn::Tensor& logits, std::span<const std::size_t> labels) {
  const std::size_t k = logits.shape().sample();
  std::vector<LabeledLogits> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out[i].logits.assign(logits.data() + i * k, logits.data() + (i + 1) * k);
    out[i].true_class = labels[i];
  }
  return out;
}

}  // namespace detail

/// Mean per-sample weighted loss over a labeled dataset, inference path, no augmentation.
inline double evaluate_loss(const AdaptedModel& m, const Dataset& ds, const ClassWeights& w,
                            const std::function<Image(const ImageRecord&)>& prepared, std::size_t batch_size = 32) {
  if (ds.empty()) throw EmptyInputError("evaluate_loss: empty dataset");
  if (!ds.fully_labeled()) throw ContractError("evaluate_loss: dataset must be labeled");
  double total = 0.0;
  std::vector<Image> images;
  std::vector<std::size_t> labels;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    images.clear();
    labels.clear();
    for (std::size_t i = start; i < std::min(ds.size(), start + batch_size); ++i) {
      images.push_back(prepared(ds.records()[i]));
      labels.push_back(*ds.records()[i].label);
    }
    const auto logits = m.infer_logits(make_input_batch(images, m.spec()));
    const auto samples = detail::to_labeled(logits, labels);
    total += batch_loss(samples, w).value * static_cast<double>(samples.size());
  }
  return total / static_cast<double>(ds.size());
}

inline double evaluate_loss(const AdaptedModel& m, const Dataset& ds, const ClassWeights& w,
                            const TrainOptions& opt = {}) {
  const PreparedImages prepared(ds, m.spec(), opt);
  return evaluate_loss(m, ds, w, std::cref(prepared), opt.batch_size);
}

struct PhaseResult {
  std::vector<EpochLog> log;
  EarlyStopState stop_state;
};

/// Trains with SGD + momentum on the mean weighted loss, updating only the
/// phase's trainable groups. Validation loss is evaluated after every epoch;
/// on return the model holds the weights of the best validation epoch.
/// Momentum buffers start at zero for every phase.
inline PhaseResult run_phase(AdaptedModel& model, const TrainingPhase& phase, const Dataset& train,
                             const Dataset& validation, const ClassWeights& weights, std::uint64_t seed,
                             const TrainOptions& opt = {}, std::size_t phase_index = 1) {
  phase.validate();
  if (train.empty() || validation.empty()) throw EmptyInputError("run_phase: empty train or validation set");
  if (train.label_space().size() != model.head_classes() || weights.size() != model.head_classes())
    throw ContractError("run_phase: head has " + std::to_string(model.head_classes()) + " outputs but the label space has " +
                        std::to_string(train.label_space().size()) + " classes");
  if (opt.batch_size == 0) throw ContractError("run_phase: batch size must be positive");

  model = set_trainable(std::move(model), phase.trainable_groups);
  std::vector<nn::Parameter*> trainable;
  for (auto g : phase.trainable_groups)
    for (auto* p : model.parameters(g))
      if (!p->is_buffer) trainable.push_back(p);
  std::vector<std::vector<float>> velocity(trainable.size());
  for (std::size_t i = 0; i < trainable.size(); ++i) velocity[i].assign(trainable[i]->value.size(), 0.0f);

  const PreparedImages train_images(train, model.spec(), opt);
  const PreparedImages val_images(validation, model.spec(), opt);

  PhaseResult result;
  AdaptedModel::State best = model.state();
  const auto lr = static_cast<float>(phase.learning_rate);
  const auto mu = static_cast<float>(opt.momentum);

  auto run_epoch = [&](std::size_t epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t epoch_seed = derive_seed(seed, phase_index * 100003 + epoch);
    std::vector<ImageRecord> order = train.records();
    Rng shuffler(derive_seed(epoch_seed, 1));
    shuffler.shuffle(std::span<ImageRecord>(order));
    const Dataset epoch_view(train.label_space(), std::move(order));
    AugmentedStream stream(epoch_view, derive_seed(epoch_seed, 2), std::cref(train_images), opt.augment);

    double loss_sum = 0.0;
    std::vector<Image> images;
    std::vector<std::size_t> labels;
    while (true) {
      images.clear();
      labels.clear();
      while (images.size() < opt.batch_size) {
        auto sample = stream.next();
        if (!sample) break;
        images.push_back(std::move(sample->image));
        labels.push_back(sample->label);
      }
      if (images.empty()) break;
      model.zero_grad();
      const auto logits = model.train_forward(make_input_batch(images, model.spec()));
      const auto samples = detail::to_labeled(logits, labels);
      LossValue loss;
      try {
        loss = batch_loss(samples, weights);
      } catch (const NumericInputError&) {
        loss.value = std::numeric_limits<double>::quiet_NaN();
      }
      if (!std::isfinite(loss.value))
        throw DivergenceError("training diverged in phase " + std::to_string(phase_index) + " epoch " +
                                  std::to_string(epoch),
                              result.log);
      loss_sum += loss.value * static_cast<double>(samples.size());
      nn::Tensor grad(logits.shape());
      for (std::size_t i = 0; i < grad.numel(); ++i) grad.data()[i] = static_cast<float>(loss.gradient_wrt_logits[i]);
      model.train_backward(grad);
      for (std::size_t i = 0; i < trainable.size(); ++i) {
        auto& v = velocity[i];
        auto& p = *trainable[i];
        for (std::size_t j = 0; j < v.size(); ++j) {
          v[j] = mu * v[j] + p.grad[j];
          p.value[j] -= lr * v[j];
        }
      }
    }
    model.clear_cache();
    const double train_loss = loss_sum / static_cast<double>(train.size());
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    try {
      val_loss = evaluate_loss(model, validation, weights, std::cref(val_images), opt.batch_size);
    } catch (const NumericInputError&) {
      // non-finite logits; reported as divergence below
    }
    if (!std::isfinite(val_loss))
      throw DivergenceError("validation loss is not finite in phase " + std::to_string(phase_index) + " epoch " +
                                std::to_string(epoch),
                            result.log);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back({phase_index, epoch, train_loss, val_loss, secs});
    if (opt.on_epoch) opt.on_epoch(result.log.back());
    return val_loss;
  };

  result.stop_state = run_with_early_stopping(phase.max_epochs, phase.patience, run_epoch,
                                              [&](std::size_t) { best = model.state(); });
  model.load_state(best);
  return result;
}

/// Runs the phases in order; each phase starts from the previous phase's best weights.
/// `on_phase_end(phase_index, model)` sees the restored model after each phase.
inline std::vector<EpochLog> run_schedule(
    AdaptedModel& model, const Schedule& schedule, const Dataset& train, const Dataset& validation,
    const ClassWeights& weights, std::uint64_t seed, const TrainOptions& opt = {},
    const std::function<void(std::size_t, const AdaptedModel&)>& on_phase_end = {}) {
  schedule.validate();
  std::vector<EpochLog> log;
  for (std::size_t i = 0; i < schedule.phases.size(); ++i) {
    try {
      auto r = run_phase(model, schedule.phases[i], train, validation, weights, seed, opt, i + 1);
      log.insert(log.end(), r.log.begin(), r.log.end());
    } catch (const DivergenceError& e) {
      auto full = log;
      full.insert(full.end(), e.log().begin(), e.log().end());
      throw DivergenceError(e.what(), std::move(full));
    }
    if (on_phase_end) on_phase_end(i + 1, model);
  }
  return log;
}

/// `phase,epoch,train_loss,val_loss,seconds`; losses printed round-trip exact.
inline void write_epoch_log(std::ostream& out, std::span<const EpochLog> log) {
  out << "phase,epoch,train_loss,val_loss,seconds\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g,%.17g,%.3f\n", e.phase, e.epoch, e.train_loss, e.validation_loss,
                  e.seconds);
    out << buf;
  }
}

}  // namespace dermo

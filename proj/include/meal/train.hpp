#pragma once

// Training protocol: Adam, learning-rate halving on validation plateaus,
// best-checkpoint selection and seeded, reproducible input pipelines.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "meal/augment.hpp"
#include "meal/dataset.hpp"
#include "meal/metrics.hpp"
#include "meal/models.hpp"
#include "meal/ops.hpp"

namespace meal {

// ---------------------------------------------------------------- determinism

namespace detail {
inline std::uint64_t global_seed = 0;
}

/// Fixes the process-wide seed every RngStream is derived from and pins the
/// GEMM backend to one thread so reductions run in a fixed order.
inline void set_global_determinism(std::uint64_t seed) {
  detail::global_seed = seed;
  Eigen::setNbThreads(1);
}

inline std::uint64_t global_seed() { return detail::global_seed; }

/// Named child stream of the global seed.
inline RngStream seeded_stream(std::string_view label) { return RngStream(global_seed()).fork(label); }

// ---------------------------------------------------------------- optimizer

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-7;
};

template <class T>
class Adam {
 public:
  Adam(NamedParams<T> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& [name, p] : params_) {
      m_.emplace_back(p.shape());
      v_.emplace_back(p.shape());
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  /// One bias-corrected update; parameters without a gradient are skipped.
  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Var<T>& p = params_[i].second;
      if (p.grad().empty()) continue;
      const Tensor<T>& g = p.grad();
      Tensor<T>& w = p.mutable_value();
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = g[j];
        const double mj = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
        const double vj = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        w[j] -= static_cast<T>(lr * (mj / c1) / (std::sqrt(vj / c2) + cfg_.eps));
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  NamedParams<T> params_;
  AdamConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------- schedule

/// Halves the learning rate once validation loss has failed to improve for
/// more than `patience` consecutive epochs. An epoch improves when its loss is
/// below the reference by more than `min_delta`; the counter resets on
/// improvement and after each reduction.
struct PlateauScheduler {
  double lr = 1e-4;
  double factor = 0.5;
  int patience = 5;
  double min_delta = 1e-6;
  int counter = 0;
  double reference = std::numeric_limits<double>::infinity();

  /// Feeds one epoch's validation loss; returns true if the rate was reduced.
  bool step(double val_loss) {
    if (val_loss < reference - min_delta) {
      reference = val_loss;
      counter = 0;
      return false;
    }
    if (++counter > patience) {
      lr *= factor;
      counter = 0;
      return true;
    }
    return false;
  }
};

// ---------------------------------------------------------------- state

struct HistoryRow {
  int epoch = 0;
  int batch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct EpochSummary {
  int epoch = 0;
  double train_loss = 0.0;  // mean over batches
  double val_loss = 0.0;
  double lr = 0.0;  // rate used during the epoch
};

struct TrainState {
  int epoch = 0;
  double lr = 1e-4;
  int plateau_counter = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  std::vector<HistoryRow> history;  // one row per batch
  std::vector<EpochSummary> epochs;
  std::vector<int> lr_reductions;  // epochs after which the rate was halved
};

inline const char* kHistoryCsvHeader = "epoch,batch,train_loss,val_loss,lr";

inline void write_history_csv(std::ostream& os, const std::vector<HistoryRow>& rows,
                              const std::string& digest = "") {
  write_csv_digest(os, digest);
  os << kHistoryCsvHeader << '\n';
  for (const auto& r : rows)
    os << r.epoch << ',' << r.batch << ',' << format_double(r.train_loss) << ','
       << format_double(r.val_loss) << ',' << format_double(r.lr) << '\n';
}

inline std::vector<HistoryRow> read_history_csv(std::istream& is) {
  std::string line;
  if (!getline_skip_comments(is, line) || line != kHistoryCsvHeader) throw IoError("not a history CSV");
  std::vector<HistoryRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto c = split_csv_line(line);
    if (c.size() != 5) throw IoError("history CSV: expected 5 columns");
    rows.push_back({std::stoi(c[0]), std::stoi(c[1]), std::stod(c[2]), std::stod(c[3]), std::stod(c[4])});
  }
  return rows;
}

// ---------------------------------------------------------------- inputs

/// Paired pipeline-time augmentation: geometric ops transform source and
/// target together, the intensity op touches the source only.
struct PipelineAugment {
  bool enabled = false;
  double flip_p = 0.5;
  bool rot90 = true;
  double crop_p = 0.25;
  bool intensity = true;
  // Probability that a training step runs the multi-stream views as identity,
  // matching the evaluation-time configuration.
  double stream_identity_p = 0.0;

  static PipelineAugment for_variant(Variant v) {
    PipelineAugment a;
    a.enabled = v != Variant::NA;
    if (v == Variant::BD) a.stream_identity_p = 0.5;
    return a;
  }
};

inline void to_json(nlohmann::json& j, const PipelineAugment& a) {
  j = {{"enabled", a.enabled}, {"flip_p", a.flip_p}, {"rot90", a.rot90},
       {"crop_p", a.crop_p}, {"intensity", a.intensity}, {"stream_identity_p", a.stream_identity_p}};
}

template <class T>
struct StepInputs {
  std::vector<Tensor<T>> inputs;  // arity of the variant
  Tensor<T> target;
  std::optional<Tensor<T>> mask;
  std::vector<AugmentationSpec> pipeline_specs;
  std::optional<StreamSpecs> stream_specs;  // CC/FL views or BD in-graph parameters
};

/// Builds the network inputs for one batch. In training mode the optional
/// pipeline augmentation runs first; CC/FL then receive four freshly sampled
/// stream views and BD receives sampled in-graph parameters. Outside training
/// every stream is the identity.
template <class T>
StepInputs<T> prepare_inputs(const ModelConfig& cfg, Tensor<T> source, Tensor<T> target,
                             std::optional<Tensor<T>> mask, bool training,
                             const PipelineAugment& pa, RngStream rng) {
  StepInputs<T> s;
  const Dims3 ext = aug::spatial(source.shape());
  if (training && pa.enabled) {
    auto geometric = [&](const AugmentationSpec& spec) {
      source = aug::apply(source, spec);
      target = aug::apply(target, spec);
      if (mask) {
        mask = aug::apply(*mask, spec);
        for (auto& v : mask->vec()) v = v >= T{0.5} ? T{1} : T{0};
      }
      s.pipeline_specs.push_back(spec);
    };
    geometric(aug::sample_flip(rng, pa.flip_p));
    if (pa.rot90 && ext.h == ext.w) geometric(aug::sample_rot90(rng));
    if (rng.uniform() < pa.crop_p) {
      auto spec = AugmentationSpec::crop_resize(cfg.crop_shape);
      spec.sampled = true;
      geometric(spec);
    }
    if (pa.intensity) {
      auto spec = aug::sample_intensity(rng, cfg.contrast_mean);
      source = aug::apply(source, spec);
      s.pipeline_specs.push_back(spec);
    }
  }
  RngStream srng = rng.fork("streams");
  const bool sampled = training && !(pa.stream_identity_p > 0.0 && srng.uniform() < pa.stream_identity_p);
  switch (cfg.variant) {
    case Variant::NA:
    case Variant::TA:
      s.inputs.push_back(std::move(source));
      break;
    case Variant::CC:
    case Variant::FL: {
      const StreamSpecs specs =
          sampled ? sample_stream_specs(srng, cfg.stream_config()) : identity_stream_specs(ext);
      auto views = apply_stream_specs(source, specs);
      for (auto& v : views.views) s.inputs.push_back(std::move(v));
      s.stream_specs = specs;
      break;
    }
    case Variant::BD:
      s.stream_specs =
          sampled ? sample_stream_specs(srng, cfg.stream_config()) : identity_stream_specs(ext);
      s.inputs.push_back(std::move(source));
      break;
  }
  s.target = std::move(target);
  s.mask = std::move(mask);
  return s;
}

// ---------------------------------------------------------------- trainer

struct TrainConfig {
  int epochs = 300;
  double lr0 = 1e-4;
  int patience = 5;
  double factor = 0.5;
  double min_delta = 1e-6;
  std::size_t batch = 1;
  std::uint64_t seed = 42;
  LossConfig loss;
  AdamConfig adam;
  std::optional<PipelineAugment> pipeline;  // defaults to PipelineAugment::for_variant
  bool shuffle = true;
  bool prefetch = true;
  bool restore_best = true;  // load the best weights back into the model at the end
  // Called on every new best epoch with a snapshot of the state (checkpointing).
  std::function<void(const TrainState&)> on_best;
  // Called at the end of every epoch (progress reporting).
  std::function<void(const EpochSummary&)> on_epoch;
};

template <class T>
std::vector<Tensor<T>> snapshot_params(const Model<T>& m) {
  std::vector<Tensor<T>> out;
  for (const auto& [name, p] : m.parameters()) out.push_back(p.value());
  return out;
}

template <class T>
void restore_params(Model<T>& m, const std::vector<Tensor<T>>& values) {
  auto params = m.parameters();
  if (params.size() != values.size()) throw ShapeError("restore_params: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].second.value().check_same(values[i], "restore_params");
    params[i].second.mutable_value() = values[i];
  }
}

/// Mean loss over a dataset in evaluation mode (no dropout, identity streams).
template <class T>
double evaluate_loss(const Model<T>& model, const std::vector<PairedSample>& samples,
                     const LossConfig& loss, std::size_t batch = 1) {
  NoGradGuard ng;
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& b : batch_dataset<T>(samples, batch)) {
    auto in = prepare_inputs<T>(model.config, b.source, b.target, std::nullopt, false, {}, RngStream());
    auto out = model.forward(in.inputs, ForwardOptions<T>{false, nullptr, in.stream_specs, std::nullopt});
    const double l = composite_loss(out.output, Var<T>::constant(in.target), loss).value()[0];
    total += l * static_cast<double>(b.ids.size());
    n += b.ids.size();
  }
  return total / static_cast<double>(n);
}

/// Runs the full protocol and returns the final state. Weight
/// initialisation is the caller's (Model::build); every random choice made
/// here derives from cfg.seed.
template <class T>
TrainState train(Model<T>& model, const std::vector<PairedSample>& train_set,
                 const std::vector<PairedSample>& val_set, const TrainConfig& cfg) {
  if (train_set.empty() || val_set.empty()) throw ParameterError("train: datasets must be non-empty");
  if (cfg.epochs < 1) throw ParameterError("train: epochs must be >= 1");
  if (!(cfg.lr0 > 0.0)) throw ParameterError("train: learning rate must be positive");
  const Dims3 shape = train_set[0].dims();
  for (const auto* set : {&train_set, &val_set})
    for (const auto& s : *set)
      if (!(s.dims() == shape)) throw ShapeError("train: sample '" + s.id + "' has inconsistent shape");
  if (!(shape == model.config.input_shape))
    throw ShapeError("train: data shape " + dims_str(shape) + " differs from model input " +
                     dims_str(model.config.input_shape));

  const PipelineAugment pa = cfg.pipeline.value_or(PipelineAugment::for_variant(model.config.variant));
  const RngStream root(cfg.seed);
  Adam<T> opt(model.parameters(), cfg.adam);
  PlateauScheduler sched{cfg.lr0, cfg.factor, cfg.patience, cfg.min_delta};
  TrainState st;
  st.lr = cfg.lr0;
  std::vector<Tensor<T>> best_params;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = epoch_order(
        train_set.size(),
        cfg.shuffle ? std::optional<std::uint64_t>(root.fork("shuffle").fork(epoch).next_u64())
                    : std::nullopt);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < order.size(); i += cfg.batch)
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                           order.begin() + static_cast<std::ptrdiff_t>(std::min(i + cfg.batch, order.size())));

    const RngStream aug_root = root.fork("augment").fork(epoch);
    auto produce = [&](std::size_t i) {
      Batch<T> b = make_batch<T>(train_set, batches[i]);
      return prepare_inputs<T>(model.config, std::move(b.source), std::move(b.target), std::nullopt,
                               true, pa, aug_root.fork(i));
    };
    std::optional<Prefetcher<StepInputs<T>>> pf;
    if (cfg.prefetch) pf.emplace(batches.size(), produce, 2);

    const double lr = sched.lr;
    std::vector<double> losses;
    for (std::size_t i = 0; i < batches.size(); ++i) {
      StepInputs<T> in = pf ? std::move(*pf->next()) : produce(i);
      RngStream drop = root.fork("dropout").fork(epoch).fork(i);
      opt.zero_grad();
      auto out = model.forward(in.inputs, ForwardOptions<T>{true, &drop, in.stream_specs, std::nullopt});
      Var<T> loss = composite_loss(out.output, Var<T>::constant(in.target), cfg.loss);
      const double l = loss.value()[0];
      if (!std::isfinite(l))
        throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(i + 1));
      backward(loss);
      opt.step(lr);
      losses.push_back(l);
    }

    const double val = evaluate_loss(model, val_set, cfg.loss, cfg.batch);
    if (!std::isfinite(val))
      throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
    double mean = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
      st.history.push_back({epoch, static_cast<int>(i + 1), losses[i], val, lr});
      mean += losses[i];
    }
    mean /= static_cast<double>(losses.size());
    st.epochs.push_back({epoch, mean, val, lr});
    st.epoch = epoch;
    if (sched.step(val)) st.lr_reductions.push_back(epoch);
    st.lr = sched.lr;
    st.plateau_counter = sched.counter;
    if (val < st.best_val_loss) {
      st.best_val_loss = val;
      st.best_epoch = epoch;
      if (cfg.restore_best) best_params = snapshot_params(model);
      if (cfg.on_best) cfg.on_best(st);
    }
    if (cfg.on_epoch) cfg.on_epoch(st.epochs.back());
  }
  if (cfg.restore_best && !best_params.empty()) restore_params(model, best_params);
  return st;
}

}  // namespace meal

#pragma once

// Evaluation under fixed-seed test-time perturbations.

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "meal/phantom.hpp"
#include "meal/train.hpp"

namespace meal {

/// Draws the perturbation for one sample. Rotations use k in {1, 2, 3} and
/// flips one of {H, W, H+W}, so every perturbed sample differs from the
/// original; crops use the model's crop shape.
inline std::optional<AugmentationSpec> sample_condition(Condition c, RngStream& rng, Dims3 crop) {
  switch (c) {
    case Condition::none: return std::nullopt;
    case Condition::flip: {
      const auto which = rng.below(3);
      auto s = AugmentationSpec::flip(which != 1, which != 0);
      s.sampled = true;
      return s;
    }
    case Condition::rotate: {
      auto s = AugmentationSpec::rot90(1 + static_cast<int>(rng.below(3)));
      s.sampled = true;
      return s;
    }
    case Condition::crop: return AugmentationSpec::crop_resize(crop);
    case Condition::intensity: return aug::sample_intensity(rng);
  }
  return std::nullopt;
}

/// Geometric perturbations move source, target and mask together; intensity
/// perturbations touch the source only.
template <class T>
void apply_condition(const AugmentationSpec& spec, Tensor<T>& source, Tensor<T>& target,
                     std::optional<Tensor<T>>& mask) {
  source = aug::apply(source, spec);
  if (spec.kind() == AugKind::intensity) return;
  target = aug::apply(target, spec);
  if (mask) {
    *mask = aug::apply(*mask, spec);
    for (auto& v : mask->vec()) v = v >= T{0.5} ? T{1} : T{0};
  }
}

struct EvalOptions {
  Condition condition = Condition::none;
  Split split = Split::unseen;
  std::uint64_t seed = 0;
  std::string method;  // defaults to the variant name
  double dice_threshold = phantom::kGrayThreshold;
  bool keep_predictions = false;
};

struct EvalSampleLog {
  std::string sample_id;
  std::optional<AugmentationSpec> perturbation;
  std::optional<std::array<double, 4>> alphas;  // BD only
};

template <class T>
struct EvalResult {
  std::vector<MetricRecord> records;
  std::vector<EvalSampleLog> log;
  std::vector<Volume> predictions;  // when keep_predictions
  std::vector<Volume> targets;
};

template <class T>
EvalResult<T> evaluate_model(const Model<T>& model, const std::vector<PairedSample>& samples,
                             const EvalOptions& opt) {
  NoGradGuard ng;
  EvalResult<T> r;
  const RngStream root = RngStream(opt.seed).fork("eval").fork(to_string(opt.condition));
  const std::string method = opt.method.empty() ? to_string(model.config.variant) : opt.method;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const PairedSample& s = samples[i];
    validate_sample(s);
    Tensor<T> src = to_tensor5<T>(s.source), tgt = to_tensor5<T>(s.target);
    std::optional<Tensor<T>> mask;
    if (s.mask) mask = to_tensor5<T>(*s.mask);
    RngStream rng = root.fork(i);
    EvalSampleLog entry{s.id, sample_condition(opt.condition, rng, model.config.crop_shape), std::nullopt};
    if (entry.perturbation) apply_condition(*entry.perturbation, src, tgt, mask);
    auto in = prepare_inputs<T>(model.config, std::move(src), std::move(tgt), std::move(mask), false,
                                {}, RngStream());
    auto out = model.forward(in.inputs, ForwardOptions<T>{false, nullptr, in.stream_specs, std::nullopt});
    const Tensor<T>& pred = out.output.value();
    MetricRecord rec;
    rec.sample_id = s.id;
    rec.method = method;
    rec.condition = opt.condition;
    rec.split = opt.split;
    rec.psnr_db = psnr3d(pred, in.target);
    rec.ssim = ssim3d(pred, in.target);
    if (in.mask) {
      Tensor<T> seg(pred.shape());
      for (std::size_t k = 0; k < pred.size(); ++k)
        seg[k] = pred[k] >= static_cast<T>(opt.dice_threshold) ? T{1} : T{0};
      rec.dice = dice(seg, *in.mask);
    }
    if (out.alphas.defined()) {
      const auto& a = out.alphas.value();
      entry.alphas = std::array<double, 4>{a[0], a[1], a[2], a[3]};
    }
    r.records.push_back(rec);
    r.log.push_back(std::move(entry));
    if (opt.keep_predictions) {
      r.predictions.push_back(from_tensor5(pred));
      r.targets.push_back(from_tensor5(in.target));
    }
  }
  return r;
}

inline nlohmann::json eval_log_json(const std::vector<EvalSampleLog>& log) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : log) {
    nlohmann::json o{{"sample_id", e.sample_id}};
    o["perturbation"] = e.perturbation ? nlohmann::json(*e.perturbation) : nlohmann::json(nullptr);
    if (e.alphas) o["alphas"] = *e.alphas;
    j.push_back(std::move(o));
  }
  return j;
}

}  // namespace meal

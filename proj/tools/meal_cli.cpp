// meal_cli: preprocessing, phantom generation, training, evaluation,
// statistical comparison and report figures.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error or empty input.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "meal/meal.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace meal;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct EmptyInput : Error {
  using Error::Error;
};

Dims3 dims_from(const std::vector<std::size_t>& v, const char* what) {
  if (v.size() != 3) throw UsageError(std::string(what) + " takes three values H W D");
  return {v[0], v[1], v[2]};
}

void write_json(const fs::path& p, const json& j) { write_file_atomic(p, j.dump(2) + "\n"); }

std::string dataset_digest(const std::string& manifest) {
  return manifest.empty() ? "" : sha256_file(manifest);
}

// ---------------------------------------------------------------- preprocess

struct PreprocessArgs {
  std::string manifest, out;
  std::vector<std::size_t> shape{128, 128, 64};
  double level = 40.0, width = 80.0;
  std::string source_units = "hu";
};

int cmd_preprocess(const PreprocessArgs& a) {
  const DatasetManifest m = DatasetManifest::load(a.manifest);
  if (m.entries.empty()) throw EmptyInput("no samples in " + a.manifest);
  const Dims3 shape = dims_from(a.shape, "--shape");
  RunManifest run{"preprocess", "", a.manifest, dataset_digest(a.manifest), 0, a.out, {}, {}, {}};
  run.options = {{"shape", a.shape}, {"window_level", a.level}, {"window_width", a.width},
                 {"source_units", a.source_units}};
  const std::string digest = run.digest();

  StagedDir out(a.out);
  DatasetManifest written;
  written.base_dir = a.out;
  std::vector<std::string> errors;
  json provenance = json::array();
  for (const auto& e : m.entries) {
    try {
      Volume src = load_volume(m.resolve(e.source_path));
      Volume tgt = load_volume(m.resolve(e.target_path));
      src = resample_trilinear(src, shape);
      tgt = resample_trilinear(tgt, shape);
      if (a.source_units == "hu") {
        src.units = IntensityUnits::hu;
        src = hu_window(src, a.level, a.width);
      }
      src = normalize_intensity(src);
      tgt = normalize_intensity(tgt);
      ManifestEntry me{e.id, e.id + "_source.nii.gz", e.id + "_target.nii.gz", std::nullopt};
      save_volume(out / me.source_path, src);
      save_volume(out / me.target_path, tgt);
      if (e.mask_path) {
        Volume mask = resample_trilinear(load_volume(m.resolve(*e.mask_path)), shape);
        for (float& v : mask.data.vec()) v = v >= 0.5f ? 1.0f : 0.0f;
        me.mask_path = e.id + "_mask.nii.gz";
        save_volume(out / *me.mask_path, mask);
      }
      provenance.push_back({{"id", e.id}, {"source", m.resolve(e.source_path)},
                            {"target", m.resolve(e.target_path)}});
      written.entries.push_back(std::move(me));
    } catch (const Error& err) {
      errors.push_back(e.id + ": " + err.what());
    }
  }
  if (!errors.empty()) {
    for (const auto& s : errors) std::cerr << "preprocess: " << s << '\n';
    std::cerr << "preprocess: " << errors.size() << " of " << m.entries.size() << " samples failed\n";
    return kExitFailure;
  }
  written.save((out / "manifest.json").string());
  write_json(out / "run_manifest.json", run.to_json());
  write_json(out / "provenance.json",
             {{"manifest_sha256", digest}, {"steps", {"resample_trilinear", a.source_units == "hu"
                                                                                ? "hu_window"
                                                                                : "none",
                                                      "normalize_intensity"}},
              {"samples", provenance}});
  out.commit();
  std::cout << "preprocessed " << written.entries.size() << " samples into " << a.out << '\n';
  return 0;
}

// ---------------------------------------------------------------- phantoms

struct PhantomArgs {
  std::string out;
  std::size_t count = 10;
  std::uint64_t seed = 0;
  std::vector<std::size_t> shape{32, 32, 16};
};

int cmd_phantoms(const PhantomArgs& a) {
  if (a.count == 0) throw EmptyInput("no samples requested");
  const Dims3 shape = dims_from(a.shape, "--shape");
  StagedDir out(a.out);
  DatasetManifest m;
  for (std::size_t i = 0; i < a.count; ++i) {
    const PairedSample s = make_phantom_pair(a.seed + i, shape);
    ManifestEntry e{s.id, s.id + "_source.nii.gz", s.id + "_target.nii.gz", s.id + "_mask.nii.gz"};
    save_volume(out / e.source_path, s.source);
    save_volume(out / e.target_path, s.target);
    save_volume(out / *e.mask_path, *s.mask);
    m.entries.push_back(std::move(e));
  }
  m.save((out / "manifest.json").string());
  out.commit();
  std::cout << "wrote " << a.count << " phantom pairs to " << a.out << '\n';
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config, data, val, out;
  std::string variant = "na";
  std::string scale = "full";
  int epochs = 300;
  std::uint64_t seed = 42;
  double lr = 1e-4;
  std::size_t batch = 1;
  double val_fraction = 0.2;
  bool quiet = false;
};

ModelConfig model_config_for(const std::string& scale, Variant v, const std::string& config_path) {
  ModelConfig c;
  if (scale == "full") c = ModelConfig::full(v);
  else if (scale == "desk") c = ModelConfig::desk(v);
  else throw UsageError("--scale must be full or desk");
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw IoError("cannot open config " + config_path);
    json j = json::parse(in);
    if (j.contains("model")) j = j["model"];
    json base = c;
    base.update(j);
    base["variant"] = to_string(v);
    c = base.get<ModelConfig>();
  }
  c.validate();
  return c;
}

int cmd_train(const TrainArgs& a) {
  const Variant v = parse_variant(a.variant);
  const ModelConfig mc = model_config_for(a.scale, v, a.config);
  const DatasetManifest dm = DatasetManifest::load(a.data);
  if (dm.entries.empty()) throw EmptyInput("no samples in " + a.data);
  std::vector<PairedSample> train_set = dm.load_samples(), val_set;
  if (!a.val.empty()) {
    val_set = DatasetManifest::load(a.val).load_samples();
  } else {
    if (!(a.val_fraction > 0.0 && a.val_fraction < 1.0)) throw UsageError("--val-fraction must lie in (0, 1)");
    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(a.val_fraction * train_set.size()));
    if (n_val >= train_set.size()) throw EmptyInput("too few samples to hold out a validation set");
    val_set.assign(train_set.end() - static_cast<std::ptrdiff_t>(n_val), train_set.end());
    train_set.resize(train_set.size() - n_val);
  }
  if (val_set.empty()) throw EmptyInput("no validation samples");

  RunManifest run{"train", a.config, a.data, dataset_digest(a.data), a.seed, a.out, {to_string(v)}, {}, {}};
  run.options = {{"epochs", a.epochs}, {"lr", a.lr}, {"batch", a.batch}, {"scale", a.scale},
                 {"model", mc}, {"val", a.val}, {"val_sha256", dataset_digest(a.val)},
                 {"val_fraction", a.val_fraction}};
  const std::string digest = run.digest();

  set_global_determinism(a.seed);
  RngStream init = RngStream(a.seed).fork("init");
  Model<float> model = Model<float>::build(mc, init);
  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.lr0 = a.lr;
  tc.batch = a.batch;
  tc.seed = a.seed;
  if (!a.quiet)
    tc.on_epoch = [](const EpochSummary& e) {
      std::cout << "epoch " << e.epoch << "  train " << e.train_loss << "  val " << e.val_loss << "  lr "
                << e.lr << std::endl;
    };
  const TrainState st = train(model, train_set, val_set, tc);

  StagedDir out(a.out);
  {
    std::ostringstream os;
    write_history_csv(os, st.history, digest);
    write_file_atomic(out / "history.csv", os.str());
  }
  CheckpointMeta meta{st.best_epoch, st.best_val_loss, a.seed, json::object()};
  meta.extra["manifest_sha256"] = digest;
  meta.extra["pipeline_augmentation"] = PipelineAugment::for_variant(v);
  meta.extra["lr_reductions"] = st.lr_reductions;
  meta.extra["train_ids"] = json::array();
  for (const auto& s : train_set) meta.extra["train_ids"].push_back(s.id);
  save_checkpoint((out / "checkpoint.meal").string(), model, meta);
  write_json(out / "run_manifest.json", run.to_json());
  out.commit();
  std::cout << "best epoch " << st.best_epoch << " val " << st.best_val_loss << " -> " << a.out << '\n';
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint, data, out, method, save_predictions;
  std::string condition = "none";
  std::string split = "unseen";
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a) {
  const Condition cond = parse_condition(a.condition);
  const Split split = parse_split(a.split);
  const DatasetManifest dm = DatasetManifest::load(a.data);
  if (dm.entries.empty()) throw EmptyInput("no samples in " + a.data);
  set_global_determinism(a.seed);
  const auto ck = load_checkpoint<float>(a.checkpoint);
  const auto samples = dm.load_samples();

  RunManifest run{"eval", a.checkpoint, a.data, dataset_digest(a.data), a.seed, a.out,
                  {to_string(ck.model.config.variant)}, {to_string(cond)}, {}};
  run.options = {{"checkpoint_sha256", sha256_file(a.checkpoint)}, {"split", to_string(split)},
                 {"method", a.method}};
  const std::string digest = run.digest();

  EvalOptions eo;
  eo.condition = cond;
  eo.split = split;
  eo.seed = a.seed;
  eo.method = a.method;
  eo.keep_predictions = !a.save_predictions.empty();
  const auto res = evaluate_model(ck.model, samples, eo);

  std::ostringstream os;
  write_metric_csv(os, res.records, digest);
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  write_file_atomic(a.out, os.str());
  json log{{"manifest_sha256", digest}, {"run", run.to_json()}, {"samples", eval_log_json(res.log)}};
  write_json(a.out + ".log.json", log);
  if (eo.keep_predictions) {
    StagedDir pd(a.save_predictions);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      save_volume(pd / (samples[i].id + ".nii.gz"), res.predictions[i]);
      save_volume(pd / (samples[i].id + "_target.nii.gz"), res.targets[i]);
    }
    write_json(pd / "eval_log.json", log);
    pd.commit();
  }
  std::cout << "evaluated " << res.records.size() << " samples (" << to_string(cond) << ") -> " << a.out << '\n';
  return 0;
}

// ---------------------------------------------------------------- compare

struct CompareArgs {
  std::vector<std::string> csvs;
  std::string out;
  std::vector<std::string> metrics{"psnr", "ssim", "dice"};
  double alpha = kSignificanceAlpha;
};

int cmd_compare(const CompareArgs& a) {
  if (a.csvs.size() < 2) throw UsageError("compare needs at least two metric CSVs");
  std::vector<MetricRecord> all;
  json inputs = json::array();
  for (const auto& p : a.csvs) {
    auto rows = read_metric_csv_file(p);
    inputs.push_back({{"path", p}, {"sha256", sha256_file(p)}});
    all.insert(all.end(), rows.begin(), rows.end());
  }
  RunManifest run{"compare", "", "", "", 0, a.out, {}, {}, {}};
  run.options = {{"inputs", inputs}, {"metrics", a.metrics}, {"alpha", a.alpha}};
  // Paths do not enter the digest, only the file contents.
  json digest_src = run.options;
  for (auto& i : digest_src["inputs"]) i.erase("path");
  const std::string digest = sha256_hex(digest_src.dump());

  std::map<std::pair<std::string, std::string>, std::vector<MetricRecord>> sections;
  for (const auto& r : all) sections[{to_string(r.split), to_string(r.condition)}].push_back(r);
  std::vector<StatReport> reports;
  for (const auto& [key, rows] : sections) {
    std::set<std::string> methods;
    for (const auto& r : rows) methods.insert(r.method);
    if (methods.size() < 2)
      throw UsageError("section " + key.first + "/" + key.second + " has a single method; duplicate CSV?");
    for (const auto& ms : a.metrics) {
      const Metric metric = parse_metric(ms);
      if (metric == Metric::dice &&
          !std::all_of(rows.begin(), rows.end(), [](const MetricRecord& r) { return r.dice.has_value(); }))
        continue;
      reports.push_back(build_stat_report(rows, metric, key.first + " / " + key.second, a.alpha));
    }
  }
  json j{{"manifest_sha256", digest}, {"inputs", inputs}, {"reports", json::array()}};
  for (const auto& r : reports) j["reports"].push_back(to_json(r));
  std::string table = stat_table(reports);
  std::ostringstream ranking;
  ranking << "# manifest_sha256=" << digest << '\n' << "section,metric,rank,method,mean\n";
  for (const auto& r : reports)
    for (std::size_t i = 0; i < r.ranking.size(); ++i)
      ranking << r.section << ',' << to_string(r.metric) << ',' << i + 1 << ',' << r.ranking[i].first << ','
              << format_double(r.ranking[i].second) << '\n';

  StagedDir out(a.out);
  write_json(out / "stats.json", j);
  write_file_atomic(out / "table.txt", "# manifest_sha256=" + digest + "\n" + table);
  write_file_atomic(out / "ranking.csv", ranking.str());
  write_json(out / "run_manifest.json", run.to_json());
  out.commit();
  std::cout << table;
  return 0;
}

// ---------------------------------------------------------------- report

struct ReportArgs {
  std::string pred, target, out, sample;
  std::optional<std::size_t> slice;
};

bool is_volume_file(const fs::path& p) {
  const std::string n = p.filename().string();
  auto ends = [&](const std::string& s) { return n.size() > s.size() && n.compare(n.size() - s.size(), s.size(), s) == 0; };
  return ends(".nii") || ends(".nii.gz");
}

std::string volume_stem(const fs::path& p) {
  const std::string n = p.filename().string();
  for (const std::string_view s : {".nii.gz", ".nii"})
    if (n.size() > s.size() && std::string_view(n).substr(n.size() - s.size()) == s)
      return n.substr(0, n.size() - s.size());
  return n;
}

std::map<std::string, fs::path> volumes_in(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || !is_volume_file(e.path())) continue;
    const std::string stem = volume_stem(e.path());
    if (stem.size() > 7 && stem.compare(stem.size() - 7, 7, "_target") == 0) continue;
    out[stem] = e.path();
  }
  return out;
}

/// Target for sample `id`: <target>/<id>_target.nii.gz or <target>/<id>.nii.gz.
fs::path target_for(const fs::path& dir, const std::string& id) {
  for (const std::string& n : {id + "_target.nii.gz", id + "_target.nii", id + ".nii.gz", id + ".nii"})
    if (fs::exists(dir / n)) return dir / n;
  throw IoError("no target volume for sample '" + id + "' in " + dir.string());
}

int cmd_report(const ReportArgs& a) {
  // Either one directory per method, or the predictions of a single method.
  std::vector<std::pair<std::string, fs::path>> method_dirs;
  for (const auto& e : fs::directory_iterator(a.pred))
    if (e.is_directory()) method_dirs.emplace_back(e.path().filename().string(), e.path());
  std::sort(method_dirs.begin(), method_dirs.end());
  if (method_dirs.empty()) method_dirs.emplace_back(fs::path(a.pred).filename().string(), a.pred);

  std::vector<MethodVolumes> methods;
  std::map<std::string, std::vector<std::array<double, 4>>> alphas;
  json inputs = json::object();
  for (const auto& [name, dir] : method_dirs) {
    const auto preds = volumes_in(dir);
    if (preds.empty()) continue;
    MethodVolumes mv{name, {}, {}, {}};
    for (const auto& [id, path] : preds) {
      const fs::path tp = target_for(a.target.empty() ? dir : fs::path(a.target), id);
      mv.sample_ids.push_back(id);
      mv.predictions.push_back(load_volume(path.string()));
      mv.targets.push_back(load_volume(tp.string()));
      require_same_shape(mv.predictions.back(), mv.targets.back(), "report '" + name + "/" + id + "'");
      inputs[name][id] = {{"prediction", sha256_file(path)}, {"target", sha256_file(tp)}};
    }
    if (fs::exists(dir / "eval_log.json")) {
      const json log = json::parse(read_file_bytes(dir / "eval_log.json"));
      for (const auto& s : log.at("samples"))
        if (s.contains("alphas")) alphas[name].push_back(s["alphas"].get<std::array<double, 4>>());
    }
    methods.push_back(std::move(mv));
  }
  if (methods.empty()) throw EmptyInput("no prediction volumes under " + a.pred);
  for (const auto& m : methods)
    if (m.sample_ids != methods[0].sample_ids)
      throw AlignmentError("methods " + methods[0].method + " and " + m.method + " cover different samples");

  const std::string digest = sha256_hex(json{{"inputs", inputs}, {"slice", a.slice ? json(*a.slice) : json()},
                                             {"sample", a.sample}}.dump());
  const std::map<std::string, std::string> text{{"manifest_sha256", digest}, {"Software", "meal_cli"}};
  std::size_t sample = 0;
  if (!a.sample.empty()) {
    const auto& ids = methods[0].sample_ids;
    const auto it = std::find(ids.begin(), ids.end(), a.sample);
    if (it == ids.end()) throw UsageError("sample '" + a.sample + "' not found");
    sample = static_cast<std::size_t>(it - ids.begin());
  }

  StagedDir out(a.out);
  json summary{{"manifest_sha256", digest}, {"methods", json::array()}};
  Image heat(1, 1);
  const HeatmapLayout lay = render_heatmaps(methods, sample, a.slice, &heat);
  write_png((out / "heatmaps.png").string(), heat, text);
  summary["heatmaps"] = {{"file", "heatmaps.png"}, {"sample_id", lay.sample_id}, {"slice", lay.slice},
                         {"color_scale", {0.0, lay.vmax}}, {"rows", lay.rows},
                         {"columns", {"target", "prediction", "abs_error"}}};

  std::vector<std::pair<std::string, Histogram>> hists;
  std::vector<std::pair<std::string, BoxStats>> psnr_boxes, ssim_boxes;
  double plo = 1e300, phi = -1e300;
  std::ostringstream hist_csv;
  write_csv_digest(hist_csv, digest);
  hist_csv << "method,bin,center,count\n";
  std::vector<MetricRecord> records;
  for (const auto& m : methods) {
    hists.emplace_back(m.method, difference_histogram(m.predictions, m.targets));
    for (std::size_t i = 0; i < kHistogramBins; ++i)
      hist_csv << m.method << ',' << i << ',' << format_double(Histogram::bin_center(i)) << ','
               << hists.back().second.counts[i] << '\n';
    std::vector<double> ps, ss;
    for (std::size_t i = 0; i < m.predictions.size(); ++i) {
      const auto p = to_tensor5<double>(m.predictions[i]), t = to_tensor5<double>(m.targets[i]);
      MetricRecord r;
      r.sample_id = m.sample_ids[i];
      r.method = m.method;
      r.psnr_db = psnr3d(p, t);
      r.ssim = ssim3d(p, t);
      records.push_back(r);
      ps.push_back(psnr_for_report(r.psnr_db));
      ss.push_back(r.ssim);
    }
    psnr_boxes.emplace_back(m.method, box_stats(ps));
    ssim_boxes.emplace_back(m.method, box_stats(ss));
    plo = std::min(plo, psnr_boxes.back().second.min);
    phi = std::max(phi, psnr_boxes.back().second.max);
    summary["methods"].push_back(m.method);
  }
  write_png((out / "histograms.png").string(), render_histograms(hists), text);
  write_file_atomic(out / "histograms.csv", hist_csv.str());
  write_png((out / "boxplot_psnr.png").string(), render_boxplots(psnr_boxes, plo - 1.0, phi + 1.0), text);
  write_png((out / "boxplot_ssim.png").string(), render_boxplots(ssim_boxes, 0.0, 1.0), text);
  std::ostringstream mcsv;
  write_metric_csv(mcsv, records, digest);
  write_file_atomic(out / "metrics.csv", mcsv.str());
  summary["histogram"] = {{"bins", kHistogramBins}, {"range", {-1.0, 1.0}}, {"file", "histograms.png"}};
  for (const auto& [name, av] : alphas) {
    const std::string f = "alphas_" + name + ".png";
    write_png((out / f).string(), render_alpha_bars(av), text);
    summary["alpha_bars"][name] = {{"file", f}, {"stream_order", {"flip", "rot90", "crop", "intensity"}},
                                   {"per_sample", av}};
  }
  write_json(out / "report.json", summary);
  out.commit();
  std::cout << "report for " << methods.size() << " method(s) -> " << a.out << '\n';
  return 0;
}

// ---------------------------------------------------------------- params

int cmd_params(const std::string& scale) {
  std::cout << "variant  trainable  non_trainable\n";
  std::size_t na = 0;
  for (Variant v : kAllVariants) {
    RngStream r(0);
    const ModelConfig c = model_config_for(scale, v, "");
    const ParamCount pc = Model<float>::build(c, r).count_params();
    if (v == Variant::NA) na = pc.trainable;
    std::cout << to_string(v) << "       " << pc.trainable << "  " << pc.non_trainable << '\n';
  }
  std::cout << '\n' << param_count_note(na, kReferenceNaParams, scale == "full") << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MEAL: multi-encoder augmentation-aware CT-to-MRI translation"};
  app.require_subcommand(1);

  PreprocessArgs pre;
  auto* p = app.add_subcommand("preprocess", "resample, window and normalise a dataset");
  p->add_option("manifest", pre.manifest, "dataset manifest (JSON)")->required();
  p->add_option("out", pre.out, "output directory")->required();
  p->add_option("--shape", pre.shape, "target shape H W D")->expected(3);
  p->add_option("--window-level", pre.level, "HU window level");
  p->add_option("--window-width", pre.width, "HU window width");
  p->add_option("--source-units", pre.source_units, "units of the source volumes")
      ->check(CLI::IsMember({"hu", "normalized"}));

  PhantomArgs ph;
  auto* g = app.add_subcommand("phantoms", "write synthetic paired phantoms and a manifest");
  g->add_option("out", ph.out, "output directory")->required();
  g->add_option("--count", ph.count, "number of pairs");
  g->add_option("--seed", ph.seed, "seed of the first pair (pair i uses seed + i)");
  g->add_option("--shape", ph.shape, "volume shape H W D")->expected(3);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train one variant");
  t->add_option("data", tr.data, "training manifest")->required();
  t->add_option("--config", tr.config, "JSON file overriding model settings");
  t->add_option("--val", tr.val, "validation manifest (default: hold out the last samples)");
  t->add_option("--val-fraction", tr.val_fraction, "held-out fraction when --val is absent");
  t->add_option("--variant", tr.variant, "na, ta, cc, fl or bd");
  t->add_option("--scale", tr.scale, "full (128x128x64) or desk (32x32x16)")
      ->check(CLI::IsMember({"full", "desk"}));
  t->add_option("--epochs", tr.epochs, "epochs");
  t->add_option("--seed", tr.seed, "seed");
  t->add_option("--lr", tr.lr, "initial learning rate");
  t->add_option("--batch", tr.batch, "batch size");
  t->add_option("--out", tr.out, "output directory")->required();
  t->add_flag("--quiet", tr.quiet, "no per-epoch output");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint under one test condition");
  e->add_option("checkpoint", ev.checkpoint, "checkpoint file")->required();
  e->add_option("data", ev.data, "test manifest")->required();
  e->add_option("--condition", ev.condition, "none, flip, rotate, crop or intensity");
  e->add_option("--split", ev.split, "unseen or predefined");
  e->add_option("--seed", ev.seed, "perturbation seed");
  e->add_option("--method", ev.method, "method label (default: variant name)");
  e->add_option("--out", ev.out, "metric CSV path")->required();
  e->add_option("--save-predictions", ev.save_predictions, "directory for predicted and target volumes");

  CompareArgs cmp;
  auto* c = app.add_subcommand("compare", "statistical comparison of metric CSVs");
  c->add_option("csvs", cmp.csvs, "metric CSVs (one per method, any conditions)")->required();
  c->add_option("--out", cmp.out, "output directory")->required();
  c->add_option("--metrics", cmp.metrics, "metrics to compare")->delimiter(',');
  c->add_option("--alpha", cmp.alpha, "significance level");

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "error heatmaps, histograms and boxplots");
  r->add_option("pred", rep.pred, "prediction directory (one subdirectory per method)")->required();
  r->add_option("target", rep.target, "target directory (default: next to the predictions)");
  r->add_option("--out", rep.out, "output directory")->required();
  r->add_option("--slice", rep.slice, "axial slice index (default: central)");
  r->add_option("--sample", rep.sample, "sample shown in the heatmaps (default: first)");

  std::string pscale = "full";
  auto* pc = app.add_subcommand("params", "trainable parameter counts of the five variants");
  pc->add_option("--scale", pscale, "full or desk")->check(CLI::IsMember({"full", "desk"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitUsage;
  }

  try {
    if (*p) return cmd_preprocess(pre);
    if (*g) return cmd_phantoms(ph);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*c) return cmd_compare(cmp);
    if (*r) return cmd_report(rep);
    if (*pc) return cmd_params(pscale);
  } catch (const EmptyInput& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& ex) {
    std::cerr << "usage error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const AlignmentError& ex) {
    std::cerr << "alignment error: " << ex.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

#pragma once

// Dataset manifests, batching and a bounded prefetch queue.

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "meal/nifti.hpp"
#include "meal/rng.hpp"

namespace meal {

struct ManifestEntry {
  std::string id;
  std::string source_path;
  std::string target_path;
  std::optional<std::string> mask_path;
};

/// JSON manifest: a list of {id, source_path, target_path, mask_path?}.
/// Relative paths resolve against the manifest's directory.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;

  static DatasetManifest load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw IoError("manifest " + path + ": " + e.what());
    }
    DatasetManifest m;
    m.base_dir = std::filesystem::path(path).parent_path();
    const nlohmann::json& list = j.is_object() && j.contains("samples") ? j["samples"] : j;
    if (!list.is_array()) throw ConfigError("manifest " + path + ": expected a list of samples");
    for (const auto& e : list) {
      if (!e.contains("id") || !e.contains("source_path") || !e.contains("target_path"))
        throw ConfigError("manifest " + path + ": entry missing id/source_path/target_path");
      ManifestEntry me{e["id"].get<std::string>(), e["source_path"].get<std::string>(),
                       e["target_path"].get<std::string>(), std::nullopt};
      if (e.contains("mask_path") && !e["mask_path"].is_null())
        me.mask_path = e["mask_path"].get<std::string>();
      m.entries.push_back(std::move(me));
    }
    return m;
  }

  void save(const std::string& path) const {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& e : entries) {
      nlohmann::json o{{"id", e.id}, {"source_path", e.source_path}, {"target_path", e.target_path}};
      if (e.mask_path) o["mask_path"] = *e.mask_path;
      list.push_back(std::move(o));
    }
    std::ofstream out(path);
    out << list.dump(2) << '\n';
    if (!out) throw IoError("cannot write manifest " + path);
  }

  std::string resolve(const std::string& p) const {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? p : (base_dir / fp).string();
  }

  /// Loads every sample; volumes are taken to be preprocessed to [0, 1] already.
  std::vector<PairedSample> load_samples() const {
    std::vector<PairedSample> out;
    out.reserve(entries.size());
    for (const auto& e : entries) {
      PairedSample s;
      s.id = e.id;
      s.source = load_volume(resolve(e.source_path));
      s.target = load_volume(resolve(e.target_path));
      if (e.mask_path) s.mask = load_volume(resolve(*e.mask_path));
      validate_sample(s);
      out.push_back(std::move(s));
    }
    return out;
  }
};

template <class T>
struct Batch {
  Tensor<T> source;  // (B, H, W, D, 1)
  Tensor<T> target;
  std::optional<Tensor<T>> mask;  // present only when every sample has a mask
  std::vector<std::string> ids;
  std::vector<std::size_t> indices;
};

/// Stacks the listed samples into one batch.
template <class T>
Batch<T> make_batch(const std::vector<PairedSample>& samples,
                    const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw ParameterError("make_batch: empty index list");
  const Dims3 s = samples.at(idx[0]).dims();
  const std::size_t n = s.numel();
  const Shape shape{idx.size(), s.h, s.w, s.d, 1};
  Batch<T> b{Tensor<T>(shape), Tensor<T>(shape), std::nullopt, {}, idx};
  const bool masks = std::all_of(idx.begin(), idx.end(),
                                 [&](std::size_t i) { return samples.at(i).mask.has_value(); });
  if (masks) b.mask = Tensor<T>(shape);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const PairedSample& p = samples.at(idx[k]);
    if (!(p.dims() == s)) throw ShapeError("make_batch: mixed sample shapes");
    b.ids.push_back(p.id);
    std::copy(p.source.data.vec().begin(), p.source.data.vec().end(), b.source.data() + k * n);
    std::copy(p.target.data.vec().begin(), p.target.data.vec().end(), b.target.data() + k * n);
    if (masks) std::copy(p.mask->data.vec().begin(), p.mask->data.vec().end(), b.mask->data() + k * n);
  }
  return b;
}

/// Sample order for one pass: identity without a seed, a seeded shuffle otherwise.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::optional<std::uint64_t> shuffle_seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle_seed) {
    RngStream rng(*shuffle_seed, 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  }
  return order;
}

/// Splits the samples into consecutive batches (the last one may be short).
template <class T>
std::vector<Batch<T>> batch_dataset(const std::vector<PairedSample>& samples, std::size_t batch = 1,
                                    std::optional<std::uint64_t> shuffle_seed = std::nullopt) {
  if (batch < 1) throw ParameterError("batch_dataset: batch size must be >= 1");
  if (samples.empty()) return {};
  for (const auto& s : samples)
    if (!(s.dims() == samples[0].dims()))
      throw ShapeError("batch_dataset: sample '" + s.id + "' has shape " + dims_str(s.dims()) +
                       ", expected " + dims_str(samples[0].dims()));
  const auto order = epoch_order(samples.size(), shuffle_seed);
  std::vector<Batch<T>> out;
  for (std::size_t i = 0; i < order.size(); i += batch) {
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(i),
                                 order.begin() + static_cast<std::ptrdiff_t>(std::min(i + batch, order.size())));
    out.push_back(make_batch<T>(samples, idx));
  }
  return out;
}

/// Runs `produce(i)` for i = 0..count-1 on a background thread and hands the
/// results over in order through a bounded queue. Exceptions thrown by the
/// producer are rethrown from next().
template <class Item>
class Prefetcher {
 public:
  Prefetcher(std::size_t count, std::function<Item(std::size_t)> produce, std::size_t depth = 2)
      : count_(count), depth_(std::max<std::size_t>(depth, 1)), produce_(std::move(produce)) {
    worker_ = std::thread([this] { run(); });
  }
  Prefetcher(const Prefetcher&) = delete;
  Prefetcher& operator=(const Prefetcher&) = delete;
  ~Prefetcher() {
    {
      std::lock_guard lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  /// Next item in order, or nullopt once all items were consumed.
  std::optional<Item> next() {
    std::unique_lock lk(mu_);
    if (consumed_ == count_) return std::nullopt;
    cv_.wait(lk, [&] { return !queue_.empty() || error_; });
    if (queue_.empty() && error_) std::rethrow_exception(error_);
    Item it = std::move(queue_.front());
    queue_.pop_front();
    ++consumed_;
    lk.unlock();
    cv_.notify_all();
    return it;
  }

 private:
  void run() {
    for (std::size_t i = 0; i < count_; ++i) {
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return stop_ || queue_.size() < depth_; });
        if (stop_) return;
      }
      try {
        Item it = produce_(i);
        std::lock_guard lk(mu_);
        queue_.push_back(std::move(it));
      } catch (...) {
        std::lock_guard lk(mu_);
        error_ = std::current_exception();
        cv_.notify_all();
        return;
      }
      cv_.notify_all();
    }
  }

  std::size_t count_, depth_;
  std::function<Item(std::size_t)> produce_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Item> queue_;
  std::size_t consumed_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
  std::thread worker_;
};

}  // namespace meal

#include "lap/train/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <thread>

#include "json.hpp"
#include "lap/errors.hpp"
#include "lap/tensor/checkpoint.hpp"
#include "lap/tensor/ops.hpp"
#include "lap/train/optimizer.hpp"

namespace lap::train {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::uint64_t kValidationStream = 0x76616c6964ULL;

struct IdentityResult {
  bool accepted = false;
  double loss = 0.0;
  TensorMap grads;
};

std::vector<int> draw_set(std::mt19937_64& rng, int available, int max_set) {
  const int n = std::uniform_int_distribution<int>(1, std::min(available, max_set))(rng);
  std::vector<int> idx(static_cast<std::size_t>(available));
  for (int i = 0; i < available; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < n; ++i) {
    const int j = std::uniform_int_distribution<int>(i, available - 1)(rng);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(n));
  return idx;
}

Tensor gather_views(const Tensor& images, const std::vector<int>& views) {
  const int s = images.dim(2);
  const std::size_t stride = static_cast<std::size_t>(3) * s * s;
  Tensor out({static_cast<int>(views.size()), 3, s, s});
  for (std::size_t k = 0; k < views.size(); ++k) {
    const auto src = images.data().begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(views[k]) * stride);
    std::copy(src, src + static_cast<std::ptrdiff_t>(stride), out.data().begin() + static_cast<std::ptrdiff_t>(k * stride));
  }
  return out;
}

IdentityResult run_identity(const nn::ParamStore& store, const StagePlan& plan, const TrainConfig& cfg,
                            const Sample& sample, const std::vector<int>& views, bool want_grads) {
  Tape tape;
  nn::Binding p(tape, store, want_grads ? plan.trainable : std::set<std::string>{});
  const Var images = tape.constant(gather_views(sample.images, views));
  std::vector<objectives::RelaxedMask> masks;
  for (int v : views) masks.push_back(sample.masks[static_cast<std::size_t>(v)]);
  const SetForward f = forward_set(p, cfg, images, plan.refine);
  const std::optional<Var> loss = set_objective(f, images, masks, cfg);
  IdentityResult r;
  if (!loss) return r;
  r.accepted = true;
  r.loss = loss->value().item();
  if (want_grads) r.grads = p.gradients(tape.backward(*loss));
  return r;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers.
template <typename Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  const int workers = std::min(threads, n);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

const std::vector<Sample>& pool_for(const StagePlan& plan, const TrainData& data, int epoch_index) {
  const bool wild_available = !data.wild.empty();
  if (plan.stage == Stage::A) {
    if (data.easy.empty() || (wild_available && epoch_index >= plan.wild_start)) return data.wild;
    return data.easy;
  }
  return wild_available ? data.wild : data.easy;
}

const std::vector<Sample>& validation_pool(const StagePlan& plan, const TrainData& data) {
  if (plan.stage == Stage::A) return data.easy.empty() ? data.wild : data.easy;
  return data.wild.empty() ? data.easy : data.wild;
}

void check_compatible(const nn::ParamStore& loaded, const TrainConfig& cfg, const std::string& what) {
  const nn::ParamStore reference = nn::init_parameters(cfg.net, 0);
  for (const auto& [name, t] : reference.tensors()) {
    if (!loaded.contains(name)) throw StagingError(what + ": missing weight " + name);
    if (loaded.at(name).shape() != t.shape()) {
      throw StagingError(what + ": weight " + name + " has shape " + shape_str(loaded.at(name).shape()) +
                         ", configuration expects " + shape_str(t.shape()));
    }
  }
  if (loaded.tensors().size() != reference.tensors().size()) throw StagingError(what + ": unexpected extra weights");
}

json metrics_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},        {"train_loss", m.train_loss}, {"val_loss", m.val_loss},
          {"rejected", m.rejected},  {"skipped_batches", m.skipped_batches}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

fs::path optimizer_path(const fs::path& dir, Stage stage) {
  return dir / ("stage_" + to_string(stage) + ".adam.lapw");
}

}  // namespace

StagePlan plan_for(Stage stage, const TrainConfig& cfg) {
  StagePlan p;
  p.stage = stage;
  switch (stage) {
    case Stage::A:
      p.epochs = cfg.epochs_a;
      p.loss = objectives::LossKind::RelaxedConsistency;
      p.trainable = nn::kAggregationGroups;
      p.wild_start = cfg.wild_start_a;
      break;
    case Stage::B:
      p.epochs = cfg.epochs_b;
      p.loss = objectives::LossKind::Reconstruction;
      p.trainable = nn::kRefineGroups;
      p.refine = true;
      break;
    case Stage::C:
      p.epochs = cfg.epochs_c;
      p.loss = objectives::LossKind::Reconstruction;
      p.trainable = nn::kAggregationGroups;
      p.trainable.insert(nn::kRefineGroups.begin(), nn::kRefineGroups.end());
      p.refine = true;
      break;
  }
  return p;
}

bool is_validation(const std::string& identity, int modulus) {
  return fnv1a(identity) % static_cast<std::uint64_t>(modulus) == 0;
}

Sample load_sample(const synth::Manifest& m, int modulus) {
  std::vector<int> all(m.views.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  synth::ViewBatch b = synth::load_views(m, all);
  return {m.identity, std::move(b.images), std::move(b.masks), is_validation(m.identity, modulus)};
}

TrainData load_training_data(const fs::path& easy_root, const fs::path& wild_root, const TrainConfig& cfg) {
  TrainData data;
  auto load = [&](const fs::path& root, std::vector<Sample>& out) {
    if (root.empty()) return;
    for (const synth::Manifest& m : synth::load_dataset(root)) {
      if (m.image_size != cfg.net.image_size) {
        throw ContractError(m.directory.string() + ": image size " + std::to_string(m.image_size) +
                            " differs from configured image_size " + std::to_string(cfg.net.image_size));
      }
      out.push_back(load_sample(m, cfg.val_modulus));
    }
  };
  load(easy_root, data.easy);
  load(wild_root, data.wild);
  if (data.easy.empty() && data.wild.empty()) throw ContractError("no training data given");
  return data;
}

fs::path checkpoint_path(const fs::path& dir, Stage stage) { return dir / ("stage_" + to_string(stage) + ".lapw"); }
fs::path sidecar_path(const fs::path& dir, Stage stage) { return dir / ("stage_" + to_string(stage) + ".json"); }

nn::ParamStore load_checkpoint_file(const fs::path& file, const TrainConfig& cfg) {
  if (!fs::exists(file)) throw StagingError("checkpoint not found: " + file.string());
  nn::ParamStore store(load_weights(file));
  check_compatible(store, cfg, file.string());
  return store;
}

nn::ParamStore load_checkpoint(const fs::path& dir, Stage stage, const TrainConfig& cfg) {
  const fs::path file = checkpoint_path(dir, stage);
  if (!fs::exists(file)) {
    throw StagingError("stage " + to_string(stage) + " checkpoint missing: " + file.string());
  }
  return load_checkpoint_file(file, cfg);
}

double validation_loss(const nn::ParamStore& weights, const StagePlan& plan, const TrainConfig& cfg,
                       const TrainData& data) {
  const std::vector<Sample>& pool = validation_pool(plan, data);
  std::vector<const Sample*> val;
  for (const Sample& s : pool)
    if (s.validation) val.push_back(&s);
  if (val.empty()) return 0.0;
  std::vector<IdentityResult> results(val.size());
  parallel_for(static_cast<int>(val.size()), resolve_threads(cfg.threads), [&](int i) {
    const Sample& s = *val[static_cast<std::size_t>(i)];
    std::mt19937_64 rng(synth::mix_seed(cfg.seed ^ kValidationStream, fnv1a(s.name)));
    const auto views = draw_set(rng, s.images.dim(0), cfg.net.max_set_size);
    results[static_cast<std::size_t>(i)] = run_identity(weights, plan, cfg, s, views, false);
  });
  double sum = 0.0;
  int count = 0;
  for (const auto& r : results) {
    if (!r.accepted) continue;
    sum += r.loss;
    ++count;
  }
  return count ? sum / count : 0.0;
}

std::vector<EpochMetrics> train_stage(Stage stage, const TrainConfig& cfg, const TrainData& data,
                                      const TrainOptions& options) {
  cfg.validate();
  const StagePlan plan = plan_for(stage, cfg);
  fs::create_directories(options.out_dir);
  const int threads = resolve_threads(cfg.threads);

  nn::ParamStore store;
  Adam adam({cfg.learning_rate});
  std::vector<EpochMetrics> history;
  int start_epoch = 0;
  if (options.resume && fs::exists(sidecar_path(options.out_dir, stage))) {
    std::ifstream in(sidecar_path(options.out_dir, stage));
    const json side = json::parse(in);
    if (side.at("config_hash").get<std::string>() != cfg.hash()) {
      throw StagingError("resume: configuration differs from the one that wrote " +
                         sidecar_path(options.out_dir, stage).string());
    }
    store = load_checkpoint(options.out_dir, stage, cfg);
    adam.load_state(load_weights(optimizer_path(options.out_dir, stage)));
    start_epoch = side.at("epoch").get<int>();
    for (const json& m : side.at("history")) {
      history.push_back({stage, m.at("epoch").get<int>(), m.at("train_loss").get<double>(),
                         m.at("val_loss").get<double>(), m.at("rejected").get<int>(),
                         m.at("skipped_batches").get<int>()});
    }
  } else if (stage == Stage::A) {
    store = nn::init_parameters(cfg.net, cfg.seed);
  } else {
    store = load_checkpoint(options.out_dir, stage == Stage::B ? Stage::A : Stage::B, cfg);
  }

  const std::uint64_t stage_stream = static_cast<std::uint64_t>(stage) + 1;
  for (int epoch = start_epoch; epoch < plan.epochs; ++epoch) {
    const std::vector<Sample>& pool = pool_for(plan, data, epoch);
    std::vector<const Sample*> order;
    for (const Sample& s : pool)
      if (!s.validation) order.push_back(&s);
    if (order.empty()) throw ContractError("no training identities left after the validation split");
    std::mt19937_64 rng(synth::mix_seed(cfg.seed, stage_stream * 100000 + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    EpochMetrics metrics;
    metrics.stage = stage;
    metrics.epoch = epoch + 1;
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::vector<int>> draws;
      for (std::size_t k = begin; k < end; ++k) draws.push_back(draw_set(rng, order[k]->images.dim(0), cfg.net.max_set_size));

      TensorMap acc;
      double batch_loss = 0.0;
      int accepted = 0;
      // Workers fill one chunk at a time; accumulation follows identity order
      // so results do not depend on the thread count.
      for (std::size_t chunk = begin; chunk < end; chunk += static_cast<std::size_t>(threads)) {
        const std::size_t chunk_end = std::min(end, chunk + static_cast<std::size_t>(threads));
        std::vector<IdentityResult> results(chunk_end - chunk);
        parallel_for(static_cast<int>(results.size()), threads, [&](int i) {
          const std::size_t k = chunk + static_cast<std::size_t>(i);
          results[static_cast<std::size_t>(i)] = run_identity(store, plan, cfg, *order[k], draws[k - begin], true);
        });
        for (IdentityResult& r : results) {
          if (!r.accepted) {
            ++metrics.rejected;
            continue;
          }
          ++accepted;
          batch_loss += r.loss;
          if (acc.empty()) {
            acc = std::move(r.grads);
            continue;
          }
          for (auto& [name, g] : acc) {
            const Tensor& add = r.grads.at(name);
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += add[i];
          }
        }
      }
      if (accepted == 0) {
        ++metrics.skipped_batches;
        continue;
      }
      const double inv = 1.0 / accepted;
      for (auto& [_, g] : acc)
        for (double& v : g.data()) v *= inv;
      adam.step(store.tensors(), acc);
      loss_sum += batch_loss * inv;
      ++batches;
    }
    metrics.train_loss = batches ? loss_sum / batches : 0.0;
    metrics.val_loss = validation_loss(store, plan, cfg, data);
    history.push_back(metrics);

    save_weights(checkpoint_path(options.out_dir, stage), store.tensors());
    save_weights(optimizer_path(options.out_dir, stage), adam.state());
    json hist = json::array();
    for (const auto& m : history) hist.push_back(metrics_json(m));
    const json side = {{"stage", to_string(stage)},    {"epoch", epoch + 1},          {"epochs", plan.epochs},
                       {"seed", cfg.seed},             {"config_hash", cfg.hash()},   {"config", cfg.dump()},
                       {"image_size", cfg.net.image_size}, {"history", hist}};
    write_text(sidecar_path(options.out_dir, stage), side.dump(2) + "\n");
    std::string csv = "epoch,stage,train_loss,val_loss,rejected_samples\n";
    for (const auto& m : history) {
      char line[160];
      std::snprintf(line, sizeof line, "%d,%s,%.10g,%.10g,%d\n", m.epoch, to_string(stage).c_str(), m.train_loss,
                    m.val_loss, m.rejected);
      csv += line;
    }
    write_text(options.out_dir / ("metrics_" + to_string(stage) + ".csv"), csv);
    if (options.on_epoch) options.on_epoch(metrics);
  }
  return history;
}

}  // namespace lap::train

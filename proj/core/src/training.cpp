#include "tessera/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>

#include "tessera/checkpoint.hpp"
#include "tessera/ops.hpp"
#include "tessera/random.hpp"

namespace tessera {

namespace fs = std::filesystem;

std::vector<std::string> validate_config(const TrainConfig& c, const ModelConfig& model) {
  std::vector<std::string> v;
  if (c.crop_size < 1 || c.crop_size % model.encoder.patch_size != 0) {
    v.push_back("train.crop_size: must be a positive multiple of encoder.patch_size " +
                std::to_string(model.encoder.patch_size));
  }
  if (c.batch_size < 1) v.push_back("train.batch_size: must be >= 1");
  if (c.epochs < 1) v.push_back("train.epochs: must be >= 1");
  if (c.max_steps < 0) v.push_back("train.max_steps: must be >= 0");
  if (!(c.lr_init > 0.0)) v.push_back("train.lr_init: must be > 0");
  if (c.lr_min < 0.0 || c.lr_min > c.lr_init) v.push_back("train.lr_min: must lie in [0, lr_init]");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0)) {
    v.push_back("train.beta1/beta2: must lie in [0, 1)");
  }
  if (!(c.adam_eps > 0.0)) v.push_back("train.adam_eps: must be > 0");
  if (model.precision != DType::f32) v.push_back("precision: training runs in fp32 only");
  return v;
}

double lr_at(std::int64_t step, std::int64_t total, const TrainConfig& cfg) {
  if (total <= 0) return cfg.lr_init;
  const double frac = static_cast<double>(std::clamp<std::int64_t>(step, 0, total)) / static_cast<double>(total);
  return cfg.lr_min + (cfg.lr_init - cfg.lr_min) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw std::invalid_argument("l1_loss: shapes differ " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
  }
  return ops::mean(ops::abs(ops::sub(pred, target)));
}

Adam::Adam(nn::ParamRefs params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, t] : params_) {
    m_.emplace_back(static_cast<std::size_t>(t->numel()), 0.0f);
    v_.emplace_back(static_cast<std::size_t>(t->numel()), 0.0f);
  }
}

void Adam::zero_grad() {
  for (auto& [name, t] : params_) t->zero_grad();
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = *params_[i].second;
    const Tensor g = p.grad();
    if (!g.defined()) continue;
    float* w = p.data();
    const float* gd = g.data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double gj = gd[j];
      const double mj = beta1_ * m[j] + (1.0 - beta1_) * gj;
      const double vj = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      w[j] = static_cast<float>(w[j] - lr * (mj / c1) / (std::sqrt(vj / c2) + eps_));
    }
  }
}

std::vector<TrainPair> load_pairs(const Manifest& manifest, const std::string& split) {
  std::vector<TrainPair> pairs;
  for (const auto& e : manifest.split(split)) {
    TrainPair p{load_image(manifest.resolve(e.clear)), load_image(manifest.resolve(e.hazy)), e.clear};
    if (!p.clear.same_dims(p.hazy)) throw TrainingError("pair dims differ for " + e.clear);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

TrainPair augment_pair(const TrainPair& pair, const TrainConfig& cfg, std::int64_t epoch, std::int64_t index) {
  Rng rng(Rng::derive(cfg.seed, {static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(index)}));
  const std::int64_t ch = std::min(cfg.crop_size, pair.clear.height);
  const std::int64_t cw = std::min(cfg.crop_size, pair.clear.width);
  const auto y = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(pair.clear.height - ch + 1)));
  const auto x = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(pair.clear.width - cw + 1)));
  const int k = cfg.augment_rotation ? static_cast<int>(rng.below(4)) : 0;
  return {rot90(crop(pair.clear, y, x, ch, cw), k), rot90(crop(pair.hazy, y, x, ch, cw), k), pair.name};
}

TrainResult train(DehazeModel& model, const std::vector<TrainPair>& pairs, const TrainConfig& cfg,
                  const StepCallback& on_step) {
  const auto violations = validate_config(cfg, model.config());
  if (!violations.empty()) throw std::invalid_argument("invalid training config: " + violations.front());
  if (pairs.empty()) throw TrainingError("training set is empty");

  const auto n = static_cast<std::int64_t>(pairs.size());
  const std::int64_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  std::int64_t total = cfg.epochs * per_epoch;
  if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);

  const fs::path out_dir = cfg.out_dir;
  std::ofstream csv;
  if (!cfg.out_dir.empty()) {
    fs::create_directories(out_dir);
    csv.open(out_dir / "loss.csv", std::ios::trunc);
    if (!csv) throw TrainingError("cannot write " + (out_dir / "loss.csv").string());
    csv << "step,lr,loss\n" << std::setprecision(9);
  }

  Adam opt(model.parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps);
  TrainResult result;
  result.best_epoch_loss = std::numeric_limits<double>::infinity();
  std::int64_t step = 0;
  for (std::int64_t epoch = 0; step < total; ++epoch) {
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(Rng::derive(cfg.seed, {0x6f72646572, static_cast<std::uint64_t>(epoch)}));
    for (std::int64_t i = n - 1; i > 0; --i) {
      std::swap(order[static_cast<std::size_t>(i)], order[shuffle.below(static_cast<std::uint64_t>(i + 1))]);
    }

    double epoch_sum = 0.0;
    std::int64_t epoch_steps = 0;
    for (std::int64_t b = 0; b < per_epoch && step < total; ++b) {
      const double lr = lr_at(step, total, cfg);
      const std::int64_t first = b * cfg.batch_size;
      const std::int64_t count = std::min(cfg.batch_size, n - first);
      opt.zero_grad();
      double batch_loss = 0.0;
      for (std::int64_t j = first; j < first + count; ++j) {
        const std::int64_t idx = order[static_cast<std::size_t>(j)];
        const TrainPair sample = augment_pair(pairs[static_cast<std::size_t>(idx)], cfg, epoch, idx);
        Tensor input, target;
        {
          DomainGuard host(Domain::host);
          input = sample.hazy.to_tensor();
          target = sample.clear.to_tensor();
        }
        Tensor loss = l1_loss(model.forward(input), target);
        const double value = loss.item();
        batch_loss += value / static_cast<double>(count);
        if (std::isfinite(value)) ops::mul_scalar(loss, 1.0f / static_cast<float>(count)).backward();
      }
      if (!std::isfinite(batch_loss)) {
        std::string where = "non-finite loss at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) + ")";
        if (!cfg.out_dir.empty()) {
          const fs::path snap = out_dir / "nan_snapshot.ckpt";
          save_checkpoint(model, snap, {epoch, step, batch_loss, {{"reason", "non-finite loss"}}});
          where += "; snapshot written to " + snap.string();
        }
        throw TrainingError(where);
      }
      opt.step(lr);
      LossRecord rec{step, epoch, lr, batch_loss};
      result.history.push_back(rec);
      if (csv.is_open()) csv << step << ',' << lr << ',' << batch_loss << '\n';
      if (on_step) on_step(rec);
      epoch_sum += batch_loss;
      ++epoch_steps;
      ++step;
    }

    const double epoch_loss = epoch_sum / static_cast<double>(std::max<std::int64_t>(epoch_steps, 1));
    if (!cfg.out_dir.empty()) {
      const TrainingMetadata meta{epoch, step, epoch_loss, {}};
      result.last_checkpoint = out_dir / "last.ckpt";
      save_checkpoint(model, result.last_checkpoint, meta);
      if (epoch_loss < result.best_epoch_loss) {
        result.best_checkpoint = out_dir / "best.ckpt";
        save_checkpoint(model, result.best_checkpoint, meta);
      }
    }
    result.best_epoch_loss = std::min(result.best_epoch_loss, epoch_loss);
  }
  result.steps = step;
  return result;
}

TrainResult train(DehazeModel& model, const Manifest& manifest, const TrainConfig& cfg, const StepCallback& on_step) {
  return train(model, load_pairs(manifest, "train"), cfg, on_step);
}

}  // namespace tessera

#include "llgan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "llgan/checkpoint.hpp"
#include "llgan/ops.hpp"
#include "llgan/optim.hpp"

namespace llgan::metrics {

using json = nlohmann::json;

ProxyEmbedder::ProxyEmbedder(int num_classes) : num_classes_(num_classes) {
  if (num_classes < 2)
    throw std::invalid_argument("ProxyEmbedder: need at least two classes");
  // 282 -> 141 -> 70 -> 35 -> 18 -> 9, then global average pooling.
  blocks_.emplace_back(3, 16, 3, 2, 1);
  blocks_.emplace_back(16, 32, 3, 2, 0);
  blocks_.emplace_back(32, 64, 3, 2, 1);
  blocks_.emplace_back(64, 128, 3, 2, 1);
  blocks_.emplace_back(128, feat_dim_, 3, 2, 1);
  fc_ = nn::LinearLayer(feat_dim_, num_classes);
  Rng rng(7);
  for (auto& b : blocks_) b.init(rng, 0.05f);
  fc_.init(rng, 0.05f);
}

std::vector<nn::NamedParam> ProxyEmbedder::named_params() {
  std::vector<nn::NamedParam> out;
  for (size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].collect("emb.block" + std::to_string(i), out);
  fc_.collect("emb.fc", out);
  return out;
}

ProxyEmbedder::Output ProxyEmbedder::forward(const FTensor& images,
                                             bool with_graph) {
  if (images.shape().size() != 4 || images.dim(1) != 3)
    throw std::invalid_argument("ProxyEmbedder: N x 3 x H x W input required");
  FTensor x = with_graph ? images : images.detach();
  for (auto& b : blocks_) x = nn::relu(b(x));
  FTensor feats = nn::global_avg_pool(x);  // N x E
  FTensor logits = fc_(feats);
  FTensor probs = nn::softmax_rows(logits);
  if (!with_graph) return {probs.detach(), feats.detach()};
  return {probs, feats};
}

namespace {

FTensor embed_logits(std::vector<nn::Conv2dLayer>& blocks,
                     nn::LinearLayer& fc, const FTensor& images) {
  FTensor x = images;
  for (auto& b : blocks) x = nn::relu(b(x));
  return fc(nn::global_avg_pool(x));
}

}  // namespace

float ProxyEmbedder::train(const data::Manifest& manifest, int max_epochs,
                           uint64_t seed, std::ostream* progress) {
  std::vector<int> tr, ev;
  data::split_indices(manifest, tr, ev);
  std::vector<data::LabeledSample> train_s, eval_s;
  for (int i : tr)
    train_s.push_back(data::load_sample(manifest, manifest.records[i], 282));
  for (int i : ev)
    eval_s.push_back(data::load_sample(manifest, manifest.records[i], 282));

  auto params = named_params();
  std::vector<FTensor> tensors;
  for (auto& p : params) tensors.push_back(p.tensor);
  nn::AdamState<float> opt;
  opt.lr = 1e-3f;
  opt.weight_decay = 1e-4f;

  const int bs = std::min<int>(16, static_cast<int>(train_s.size()));
  data::BatchIterator it(static_cast<int>(train_s.size()), bs, seed, true);
  float best_acc = 0;
  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    for (const auto& batch : it.epoch(epoch)) {
      std::vector<FTensor> imgs;
      std::vector<int> labels;
      for (int i : batch) {
        imgs.push_back(train_s[i].image);
        labels.push_back(train_s[i].style_id);
      }
      FTensor x = nn::stack0(imgs);
      nn::zero_grads(params);
      FTensor loss =
          nn::softmax_cross_entropy(embed_logits(blocks_, fc_, x), labels);
      loss.backward();
      nn::adam_step(tensors, opt);
    }
    int hit = 0;
    for (auto& s : eval_s) {
      auto out = forward(nn::reshape(s.image, {1, 3, 282, 282}), false);
      const auto& p = out.probs.data();
      int arg = static_cast<int>(
          std::max_element(p.begin(), p.end()) - p.begin());
      if (arg == s.style_id) ++hit;
    }
    const float acc =
        static_cast<float>(hit) / static_cast<float>(eval_s.size());
    best_acc = std::max(best_acc, acc);
    if (progress)
      *progress << "embedder epoch " << epoch << " held-out acc " << acc
                << "\n";
    if (acc >= 0.99f) break;
  }
  return best_acc;
}

void ProxyEmbedder::save(const std::filesystem::path& dir) const {
  train::Checkpoint ck;
  auto& self = const_cast<ProxyEmbedder&>(*this);
  for (auto& p : self.named_params())
    ck.put(p.name, p.tensor.shape(), p.tensor.data());
  ck.meta["kind"] = "embedder";
  ck.meta["num_classes"] = num_classes_;
  train::save_checkpoint(ck, dir);
}

void ProxyEmbedder::load(const std::filesystem::path& dir) {
  train::Checkpoint ck = train::load_checkpoint(dir);
  if (ck.meta.value("kind", "") != "embedder")
    throw std::runtime_error("checkpoint in " + dir.string() +
                             " is not an embedder checkpoint");
  if (ck.meta.value("num_classes", num_classes_) != num_classes_)
    throw std::runtime_error("embedder class count mismatch");
  for (auto& p : named_params()) {
    const auto& v = ck.get(p.name);
    if (static_cast<int64_t>(v.size()) != p.tensor.numel())
      throw std::runtime_error("embedder checkpoint size mismatch for " +
                               p.name);
    p.tensor.data() = v;
  }
}

double inception_score(const std::vector<std::vector<double>>& probs,
                       int splits) {
  const int n = static_cast<int>(probs.size());
  if (n == 0) throw std::invalid_argument("inception_score: no samples");
  if (splits < 1 || splits > n)
    throw std::invalid_argument("inception_score: invalid split count");
  const size_t k = probs[0].size();
  for (const auto& row : probs) {
    if (row.size() != k)
      throw std::invalid_argument("inception_score: ragged probability rows");
    const double s = std::accumulate(row.begin(), row.end(), 0.0);
    if (std::abs(s - 1.0) > 1e-3)
      throw std::invalid_argument(
          "inception_score: probability row does not sum to 1");
  }
  constexpr double eps = 1e-12;
  std::vector<double> scores;
  for (int s = 0; s < splits; ++s) {
    const int lo = static_cast<int>(int64_t(n) * s / splits);
    const int hi = static_cast<int>(int64_t(n) * (s + 1) / splits);
    std::vector<double> marginal(k, 0.0);
    for (int i = lo; i < hi; ++i)
      for (size_t j = 0; j < k; ++j) marginal[j] += probs[i][j];
    for (auto& m : marginal) m /= double(hi - lo);
    double kl = 0;
    for (int i = lo; i < hi; ++i)
      for (size_t j = 0; j < k; ++j) {
        const double p = std::max(probs[i][j], eps);
        kl += p * (std::log(p) - std::log(std::max(marginal[j], eps)));
      }
    scores.push_back(std::exp(kl / double(hi - lo)));
  }
  return std::accumulate(scores.begin(), scores.end(), 0.0) /
         double(scores.size());
}

Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols())
    throw std::invalid_argument("matrix_sqrt_psd: square matrix required");
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8 * std::max(1.0, m.cwiseAbs().maxCoeff()))
    throw std::invalid_argument("matrix_sqrt_psd: input is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

namespace {

void fit_gaussian(const std::vector<std::vector<double>>& feats,
                  Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
  const int n = static_cast<int>(feats.size());
  if (n < 2) throw std::invalid_argument("fid: need at least two samples");
  const int d = static_cast<int>(feats[0].size());
  Eigen::MatrixXd x(n, d);
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(feats[i].size()) != d)
      throw std::invalid_argument("fid: ragged feature rows");
    for (int j = 0; j < d; ++j) x(i, j) = feats[i][j];
  }
  mu = x.colwise().mean();
  Eigen::MatrixXd c = x.rowwise() - mu.transpose();
  cov = (c.transpose() * c) / double(n - 1);
  cov.diagonal().array() += 1e-6;
}

}  // namespace

double fid(const std::vector<std::vector<double>>& feats_a,
           const std::vector<std::vector<double>>& feats_b) {
  if (!feats_a.empty() && !feats_b.empty() &&
      feats_a[0].size() != feats_b[0].size())
    throw std::invalid_argument("fid: feature dimension mismatch");
  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  fit_gaussian(feats_a, mu_a, cov_a);
  fit_gaussian(feats_b, mu_b, cov_b);
  // Symmetric product form keeps the argument PSD up to roundoff.
  Eigen::MatrixXd sa = matrix_sqrt_psd(cov_a);
  Eigen::MatrixXd inner = sa * cov_b * sa;
  inner = 0.5 * (inner + inner.transpose().eval());
  Eigen::MatrixXd covmean = matrix_sqrt_psd(inner);
  const double d2 = (mu_a - mu_b).squaredNorm();
  return d2 + cov_a.trace() + cov_b.trace() - 2.0 * covmean.trace();
}

DetStats detection_eval(
    const std::vector<std::vector<det::Detection>>& per_image,
    float threshold) {
  DetStats st;
  st.images = static_cast<int>(per_image.size());
  double conf_sum = 0;
  int64_t conf_n = 0;
  for (const auto& dets : per_image) {
    if (dets.empty()) {
      ++st.images_without_detections;
      ++st.fp;  // failing to see the one logo is a miss scored against
      continue;
    }
    int best = 0;
    for (int i = 1; i < static_cast<int>(dets.size()); ++i)
      if (dets[i].score > dets[best].score) best = i;
    for (int i = 0; i < static_cast<int>(dets.size()); ++i) {
      conf_sum += dets[i].score;
      ++conf_n;
      if (i == best) {
        if (dets[i].score >= threshold)
          ++st.tp;
        else
          ++st.fp;
      } else if (dets[i].score >= threshold) {
        ++st.fp;
      }
    }
  }
  st.detection_rate =
      st.images > 0 ? double(st.tp) / double(st.images) : 0.0;
  st.avg_conf = conf_n > 0 ? conf_sum / double(conf_n) : 0.0;
  return st;
}

json EvalReport::to_json() const {
  return json{{"fid", fid},
              {"inception_score", {{"splits_1", is_split1},
                                   {"splits_10", is_split10}}},
              {"detection", {{"rate", det.detection_rate},
                             {"avg_conf", det.avg_conf},
                             {"tp", det.tp},
                             {"fp", det.fp},
                             {"images_without_detections",
                              det.images_without_detections}}},
              {"n_generated", n_generated}};
}

EvalReport evaluate_generator(gan::Generator& g, det::Detector& detector,
                              ProxyEmbedder& embedder,
                              const data::Manifest& manifest, int n,
                              uint64_t seed, std::ostream* progress) {
  if (n < 10)
    throw std::invalid_argument("evaluate_generator: need n >= 10 samples");
  Rng rng(seed);
  std::vector<std::vector<double>> fake_probs, fake_feats, real_feats;
  std::vector<std::vector<det::Detection>> per_image;
  const int bs = 4;
  for (int done = 0; done < n; done += bs) {
    const int b = std::min(bs, n - done);
    FTensor z = FTensor::zeros({b, g.config().latent_dim});
    for (auto& v : z.data()) v = rng.normal();
    FTensor fakes = g.forward(z, false).detach();
    auto out = embedder.forward(fakes, false);
    for (int i = 0; i < b; ++i) {
      const auto& pd = out.probs.data();
      const auto& fd = out.feats.data();
      const int s = embedder.num_classes();
      const int e = embedder.feature_dim();
      fake_probs.emplace_back(pd.begin() + i * s, pd.begin() + (i + 1) * s);
      fake_feats.emplace_back(fd.begin() + i * e, fd.begin() + (i + 1) * e);
      FTensor one = nn::reshape(nn::slice0(fakes, i), {1, 3, 282, 282});
      per_image.push_back(detector.detect(one));
    }
    if (progress)
      *progress << "evaluated " << (done + b) << "/" << n << " fakes\n";
  }
  for (const auto& rec : manifest.records) {
    auto s = data::load_sample(manifest, rec, 282);
    auto out =
        embedder.forward(nn::reshape(s.image, {1, 3, 282, 282}), false);
    const auto& fd = out.feats.data();
    real_feats.emplace_back(fd.begin(), fd.end());
  }

  EvalReport rep;
  rep.n_generated = n;
  rep.fid = fid(real_feats, fake_feats);
  rep.is_split1 = inception_score(fake_probs, 1);
  rep.is_split10 = inception_score(fake_probs, 10);
  rep.det = detection_eval(per_image, 0.75f);
  return rep;
}

}  // namespace llgan::metrics

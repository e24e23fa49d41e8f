#include "llgan/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "llgan/image_io.hpp"
#include "llgan/ops.hpp"

namespace llgan::train {

using nn::FTensor;
using json = nlohmann::json;

VariantFlags variant_flags(const std::string& name) {
  VariantFlags f;
  if (name == "base") return f;
  if (name == "frcnn") {
    f.frcnn_loss = true;
  } else if (name == "boxes") {
    f.extended_boxes = true;
  } else if (name == "backbone") {
    f.backbone_features = true;
  } else if (name == "full") {
    f.frcnn_loss = f.extended_boxes = f.backbone_features = true;
  } else {
    throw std::invalid_argument("unknown variant '" + name +
                                "' (expected base|frcnn|boxes|backbone|full)");
  }
  return f;
}

det::RoiFeature real_roi_features(const nn::Tensor<float>& image,
                                  const det::Box& gt_box,
                                  det::Detector& detector) {
  FTensor img = image;
  if (img.shape().size() == 3)
    img = nn::reshape(img, {1, img.dim(0), img.dim(1), img.dim(2)});
  if (img.shape().size() != 4 || img.dim(0) != 1)
    throw std::invalid_argument("real_roi_features: expected one 3xHxW image");
  auto feats = detector.backbone_forward(img.detach());
  FTensor roi = detector.extract_roi(feats, gt_box).detach();
  return {gt_box, roi, det::RoiFeature::Source::real};
}

namespace {

std::vector<FTensor> param_tensors(std::vector<nn::NamedParam>& params) {
  std::vector<FTensor> out;
  out.reserve(params.size());
  for (auto& p : params) out.push_back(p.tensor);
  return out;
}

void put_params(Checkpoint& ck, const std::string& prefix,
                std::vector<nn::NamedParam> params,
                std::vector<nn::NamedBuffer> buffers) {
  for (auto& p : params)
    ck.put(prefix + "." + p.name, p.tensor.shape(), p.tensor.data());
  for (auto& b : buffers)
    ck.put(prefix + "." + b.name,
           {static_cast<int>(b.data->size())}, *b.data);
}

void take_params(const Checkpoint& ck, const std::string& prefix,
                 std::vector<nn::NamedParam> params,
                 std::vector<nn::NamedBuffer> buffers) {
  for (auto& p : params) {
    const auto& v = ck.get(prefix + "." + p.name);
    if (static_cast<int64_t>(v.size()) != p.tensor.numel())
      throw std::runtime_error("checkpoint: size mismatch for " + prefix +
                               "." + p.name);
    p.tensor.data() = v;
  }
  for (auto& b : buffers) {
    const auto& v = ck.get(prefix + "." + b.name);
    if (v.size() != b.data->size())
      throw std::runtime_error("checkpoint: size mismatch for " + prefix +
                               "." + b.name);
    *b.data = v;
  }
}

void put_adam(Checkpoint& ck, const std::string& prefix,
              const nn::AdamState<float>& st) {
  for (size_t i = 0; i < st.m.size(); ++i) {
    ck.put(prefix + ".m." + std::to_string(i),
           {static_cast<int>(st.m[i].size())}, st.m[i]);
    ck.put(prefix + ".v." + std::to_string(i),
           {static_cast<int>(st.v[i].size())}, st.v[i]);
  }
}

void take_adam(const Checkpoint& ck, const std::string& prefix,
               nn::AdamState<float>& st, int64_t step) {
  st.step = step;
  st.m.clear();
  st.v.clear();
  for (size_t i = 0; ck.has(prefix + ".m." + std::to_string(i)); ++i) {
    st.m.push_back(ck.get(prefix + ".m." + std::to_string(i)));
    st.v.push_back(ck.get(prefix + ".v." + std::to_string(i)));
  }
}

}  // namespace

GanTrainer::GanTrainer(TrainConfig cfg)
    : cfg_(cfg),
      g_(gan::GeneratorConfig{cfg.latent_dim, cfg.channel_scale}),
      d_(gan::DiscriminatorConfig{cfg.channel_scale, cfg.d_l3_depth,
                                  cfg.d_l6_depth}),
      rng_(cfg.seed) {
  g_.init_weights(cfg.seed * 2 + 1);
  d_.init_weights(cfg.seed * 2 + 2);
  opt_g_.lr = cfg.lr_g;
  opt_d_.lr = cfg.lr_d;
  opt_g_.beta1 = opt_d_.beta1 = cfg.beta1;
  opt_g_.beta2 = opt_d_.beta2 = cfg.beta2;
  opt_g_.weight_decay = opt_d_.weight_decay = cfg.weight_decay;
}

void GanTrainer::load_detector(const std::filesystem::path& dir) {
  load_detector_checkpoint(detector_, dir);
  auto dp = detector_.named_params();
  nn::set_requires_grad(dp, false);  // frozen during generation training
  detector_loaded_ = true;
  real_roi_cache_.clear();
}

StepLosses GanTrainer::adversarial_step(
    const nn::FTensor& real_batch,
    const std::vector<data::LabeledSample>* samples) {
  const int n = real_batch.dim(0);
  const int img = real_batch.dim(2);
  StepLosses out;

  FTensor z = FTensor::zeros({n, cfg_.latent_dim});
  for (auto& v : z.data()) v = rng_.normal();
  FTensor fake = g_.forward(z, true);

  // Discriminator update: real labeled 1, detached fakes labeled 0.
  auto g_params = g_.named_params();
  auto d_params = d_.named_params();
  FTensor ones = FTensor::filled({n, 1}, 1.f);
  FTensor zeros = FTensor::zeros({n, 1});
  nn::zero_grads(d_params);
  FTensor l_d = nn::add(nn::bce_with_logits(d_.forward(real_batch, true), ones),
                        nn::bce_with_logits(d_.forward(fake.detach(), true),
                                            zeros));
  l_d.backward();
  auto d_tensors = param_tensors(d_params);
  nn::adam_step(d_tensors, opt_d_);
  out.l_d = l_d.data()[0];

  // Generator update: fakes re-scored by the updated discriminator with
  // flipped labels (non-saturating loss).
  FTensor l_g = nn::bce_with_logits(d_.forward(fake, true), ones);
  out.l_g = l_g.data()[0];
  FTensor g_total = l_g;

  if (samples) {
    if (!detector_loaded_)
      throw std::logic_error("llgan step without a loaded detector");
    std::vector<FTensor> style_terms, content_terms, det_terms;
    float b_sum = 0;
    Rng det_rng(cfg_.seed ^ (0x9e3779b97f4a7c15ULL *
                             static_cast<uint64_t>(step_ + 1)));
    for (int i = 0; i < n; ++i) {
      const auto& s = (*samples)[i];
      det::Box gt = s.gt_box;
      det::Box region = cfg_.flags.extended_boxes
                            ? det::extend_box(gt, cfg_.box_margin,
                                              static_cast<float>(img),
                                              static_cast<float>(img))
                            : gt;
      FTensor fimg = nn::reshape(nn::slice0(fake, i), {1, 3, img, img});
      auto ffeats = detector_.backbone_forward(fimg);
      auto frpn = detector_.rpn_forward(ffeats);
      auto proposals = detector_.make_proposals(
          frpn, static_cast<float>(img), static_cast<float>(img));
      auto pos_boxes = det::select_positive_rois(
          proposals, region, detector_.config().gen_match.pos,
          detector_.config().gen_match.neg, det::RoiFeature::Source::fake);
      std::vector<det::RoiFeature> fake_rois;
      fake_rois.reserve(pos_boxes.size());
      for (const auto& b : pos_boxes)
        fake_rois.push_back(
            {b, detector_.extract_roi(ffeats, b),
             det::RoiFeature::Source::fake});

      std::string cache_key =
          s.source_path + (cfg_.flags.extended_boxes ? "#ext" : "");
      auto it = real_roi_cache_.find(cache_key);
      if (it == real_roi_cache_.end())
        it = real_roi_cache_
                 .emplace(cache_key,
                          real_roi_features(s.image, region, detector_))
                 .first;
      auto rep = style::style_loss(it->second, fake_rois);
      out.l_s += rep.value;
      b_sum += static_cast<float>(rep.b);
      style_terms.push_back(rep.loss);

      if (cfg_.flags.backbone_features) {
        FTensor rimg =
            nn::reshape(s.image, {1, 3, img, img}).detach();
        auto rfeats = detector_.backbone_forward(rimg);
        FTensor lc = style::backbone_content_loss(rfeats, ffeats);
        out.l_content += lc.data()[0];
        content_terms.push_back(lc);
      }
      if (cfg_.flags.frcnn_loss) {
        FTensor ld =
            style::fake_detection_loss(detector_, ffeats, frpn, gt, det_rng);
        out.l_det += ld.data()[0];
        det_terms.push_back(ld);
      }
    }
    const float inv_n = 1.f / static_cast<float>(n);
    out.l_s *= inv_n;
    out.l_content *= inv_n;
    out.l_det *= inv_n;
    out.b_mean = b_sum * inv_n;

    // With lambda_style == 0 and all flags off the generator objective is
    // exactly the adversarial loss: no scaled-by-zero terms enter the graph.
    if (cfg_.lambda_style != 0.f) {
      FTensor acc = style_terms[0];
      for (size_t i = 1; i < style_terms.size(); ++i)
        acc = nn::add(acc, style_terms[i]);
      g_total =
          nn::add(g_total, nn::scale(acc, cfg_.lambda_style * inv_n));
    }
    if (!content_terms.empty()) {
      FTensor acc = content_terms[0];
      for (size_t i = 1; i < content_terms.size(); ++i)
        acc = nn::add(acc, content_terms[i]);
      g_total = nn::add(g_total, nn::scale(acc, inv_n));
    }
    if (!det_terms.empty()) {
      FTensor acc = det_terms[0];
      for (size_t i = 1; i < det_terms.size(); ++i)
        acc = nn::add(acc, det_terms[i]);
      g_total = nn::add(g_total, nn::scale(acc, inv_n));
    }
  }

  nn::zero_grads(g_params);
  g_total.backward();
  auto g_tensors = param_tensors(g_params);
  nn::adam_step(g_tensors, opt_g_);

  ++step_;
  return out;
}

StepLosses GanTrainer::dcgan_step(const nn::FTensor& real_batch) {
  if (real_batch.shape().size() != 4)
    throw std::invalid_argument("dcgan_step: N x 3 x H x W batch required");
  return adversarial_step(real_batch, nullptr);
}

StepLosses GanTrainer::llgan_step(
    const std::vector<data::LabeledSample>& batch) {
  if (batch.empty()) throw std::invalid_argument("llgan_step: empty batch");
  std::vector<FTensor> imgs;
  imgs.reserve(batch.size());
  for (const auto& s : batch) imgs.push_back(s.image);
  FTensor real = nn::stack0(imgs);
  return adversarial_step(real, &batch);
}

nn::FTensor GanTrainer::sample_images(int n, uint64_t seed) {
  Rng r(seed);
  FTensor z = FTensor::zeros({n, cfg_.latent_dim});
  for (auto& v : z.data()) v = r.normal();
  return g_.forward(z, false).detach();
}

namespace {

void write_grid(const nn::FTensor& images, const std::filesystem::path& path) {
  const int n = images.dim(0);
  const int hw = images.dim(2);
  const int cols = static_cast<int>(std::ceil(std::sqrt(double(n))));
  const int rows = (n + cols - 1) / cols;
  data::ImageU8 grid;
  grid.width = cols * hw;
  grid.height = rows * hw;
  grid.rgb.assign(static_cast<size_t>(grid.width) * grid.height * 3, 0);
  for (int i = 0; i < n; ++i) {
    data::ImageU8 im = data::from_tensor(nn::slice0(images, i));
    const int ox = (i % cols) * hw, oy = (i / cols) * hw;
    for (int y = 0; y < hw; ++y)
      std::copy(im.px(0, y), im.px(0, y) + 3 * hw, grid.px(ox, oy + y));
  }
  data::save_png(path.string(), grid);
}

}  // namespace

void GanTrainer::run(std::ostream* progress) {
  auto manifest = data::load_manifest(cfg_.dataset_dir);
  std::vector<int> tr, ev;
  data::split_indices(manifest, tr, ev);
  const int bs = cfg_.effective_batch();
  if (bs > static_cast<int>(tr.size()))
    throw std::invalid_argument("batch size " + std::to_string(bs) +
                                " exceeds train split of " +
                                std::to_string(tr.size()));
  std::vector<data::LabeledSample> samples;
  samples.reserve(tr.size());
  for (int idx : tr)
    samples.push_back(
        data::load_sample(manifest, manifest.records[idx], 282));

  if (cfg_.phase == Phase::llgan && !detector_loaded_) {
    if (cfg_.detector_checkpoint.empty())
      throw std::invalid_argument(
          "llgan phase requires a detector checkpoint");
    load_detector(cfg_.detector_checkpoint);
  }

  std::filesystem::create_directories(cfg_.checkpoint_dir);
  const auto csv_path = cfg_.checkpoint_dir / "loss.csv";
  const bool fresh = step_ == 0 || !std::filesystem::exists(csv_path);
  std::ofstream csv(csv_path, fresh ? std::ios::trunc : std::ios::app);
  if (fresh) csv << "step,phase,L_D,L_G,L_S,L_content,L_det,B_mean\n";

  data::BatchIterator it(static_cast<int>(tr.size()), bs, cfg_.seed, true);
  const int spe = static_cast<int>(tr.size()) / bs;
  for (int epoch = static_cast<int>(step_ / spe); epoch < cfg_.epochs;
       ++epoch) {
    auto batches = it.epoch(epoch);
    size_t b0 = (epoch == static_cast<int>(step_ / spe))
                    ? static_cast<size_t>(step_ % spe)
                    : 0;
    for (size_t b = b0; b < batches.size(); ++b) {
      StepLosses losses;
      if (cfg_.phase == Phase::dcgan) {
        std::vector<FTensor> imgs;
        for (int i : batches[b]) imgs.push_back(samples[i].image);
        losses = dcgan_step(nn::stack0(imgs));
      } else {
        std::vector<data::LabeledSample> batch;
        for (int i : batches[b]) batch.push_back(samples[i]);
        losses = llgan_step(batch);
      }
      csv << step_ << ',' << phase_name(cfg_.phase) << ',' << losses.l_d
          << ',' << losses.l_g << ',' << losses.l_s << ','
          << losses.l_content << ',' << losses.l_det << ',' << losses.b_mean
          << '\n';
      csv.flush();
      if (progress)
        *progress << "step " << step_ << " L_D=" << losses.l_d
                  << " L_G=" << losses.l_g << " L_S=" << losses.l_s << "\n";
      if (cfg_.sample_every > 0 && step_ % cfg_.sample_every == 0) {
        std::ostringstream name;
        name << "samples_" << std::setw(6) << std::setfill('0') << step_
             << ".png";
        write_grid(sample_images(std::min(16, bs), cfg_.seed ^ 0xabcdefULL),
                   cfg_.checkpoint_dir / name.str());
      }
    }
  }
  save(cfg_.checkpoint_dir / "ckpt_final");
}

void GanTrainer::save(const std::filesystem::path& dir) const {
  Checkpoint ck;
  auto& self = const_cast<GanTrainer&>(*this);
  put_params(ck, "g", self.g_.named_params(), self.g_.named_buffers());
  put_params(ck, "d", self.d_.named_params(), self.d_.named_buffers());
  put_adam(ck, "opt_g", opt_g_);
  put_adam(ck, "opt_d", opt_d_);
  ck.meta["kind"] = "gan";
  ck.meta["phase"] = phase_name(cfg_.phase);
  ck.meta["step"] = step_;
  ck.meta["opt_g_step"] = opt_g_.step;
  ck.meta["opt_d_step"] = opt_d_.step;
  ck.meta["rng"] = rng_.serialize();
  ck.meta["latent_dim"] = cfg_.latent_dim;
  ck.meta["channel_scale"] = cfg_.channel_scale;
  ck.meta["d_l3_depth"] = cfg_.d_l3_depth;
  ck.meta["d_l6_depth"] = cfg_.d_l6_depth;
  ck.meta["lambda_style"] = cfg_.lambda_style;
  ck.meta["seed"] = cfg_.seed;
  save_checkpoint(ck, dir);
}

void GanTrainer::load(const std::filesystem::path& dir) {
  Checkpoint ck = load_checkpoint(dir);
  if (ck.meta.value("kind", "") != "gan")
    throw std::runtime_error("checkpoint in " + dir.string() +
                             " is not a GAN checkpoint");
  if (ck.meta.value("latent_dim", cfg_.latent_dim) != cfg_.latent_dim ||
      ck.meta.value("channel_scale", cfg_.channel_scale) !=
          cfg_.channel_scale)
    throw std::runtime_error(
        "checkpoint architecture does not match the configured model");
  take_params(ck, "g", g_.named_params(), g_.named_buffers());
  take_params(ck, "d", d_.named_params(), d_.named_buffers());
  step_ = ck.meta.value("step", int64_t{0});
  take_adam(ck, "opt_g", opt_g_, ck.meta.value("opt_g_step", int64_t{0}));
  take_adam(ck, "opt_d", opt_d_, ck.meta.value("opt_d_step", int64_t{0}));
  if (ck.meta.contains("rng")) rng_.deserialize(ck.meta["rng"]);
}

void GanTrainer::warm_start(const std::filesystem::path& dir) {
  Checkpoint ck = load_checkpoint(dir);
  if (ck.meta.value("kind", "") != "gan")
    throw std::runtime_error("checkpoint in " + dir.string() +
                             " is not a GAN checkpoint");
  take_params(ck, "g", g_.named_params(), g_.named_buffers());
  take_params(ck, "d", d_.named_params(), d_.named_buffers());
  step_ = 0;
  opt_g_ = nn::AdamState<float>{};
  opt_d_ = nn::AdamState<float>{};
  opt_g_.lr = cfg_.lr_g;
  opt_d_.lr = cfg_.lr_d;
  opt_g_.beta1 = opt_d_.beta1 = cfg_.beta1;
  opt_g_.beta2 = opt_d_.beta2 = cfg_.beta2;
  opt_g_.weight_decay = opt_d_.weight_decay = cfg_.weight_decay;
  rng_ = Rng(cfg_.seed);
}

void save_detector(det::Detector& detector,
                   const std::filesystem::path& dir) {
  Checkpoint ck;
  for (auto& p : detector.named_params())
    ck.put("det." + p.name, p.tensor.shape(), p.tensor.data());
  ck.meta["kind"] = "detector";
  ck.meta["trained"] = detector.trained();
  save_checkpoint(ck, dir);
}

void load_detector_checkpoint(det::Detector& detector,
                              const std::filesystem::path& dir) {
  Checkpoint ck = load_checkpoint(dir);
  if (ck.meta.value("kind", "") != "detector")
    throw std::runtime_error("checkpoint in " + dir.string() +
                             " is not a detector checkpoint");
  for (auto& p : detector.named_params()) {
    const auto& v = ck.get("det." + p.name);
    if (static_cast<int64_t>(v.size()) != p.tensor.numel())
      throw std::runtime_error("detector checkpoint size mismatch for " +
                               p.name);
    p.tensor.data() = v;
  }
  detector.set_trained(ck.meta.value("trained", true));
}

float eval_detection_rate(det::Detector& detector,
                          const data::Manifest& manifest,
                          const std::vector<int>& indices, float iou_thr,
                          float score_thr) {
  if (indices.empty())
    throw std::invalid_argument("eval_detection_rate: no eval samples");
  int hits = 0;
  for (int idx : indices) {
    auto s = data::load_sample(manifest, manifest.records[idx], 282);
    FTensor img = nn::reshape(s.image, {1, 3, 282, 282});
    auto dets = detector.detect(img);
    for (const auto& d : dets) {
      if (d.score >= score_thr && det::iou(d.box, s.gt_box) >= iou_thr) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<float>(hits) / static_cast<float>(indices.size());
}

float train_detector(det::Detector& detector, const data::Manifest& manifest,
                     const DetectorTrainConfig& cfg, std::ostream* progress) {
  std::vector<int> tr, ev;
  data::split_indices(manifest, tr, ev);
  std::vector<data::LabeledSample> samples;
  samples.reserve(tr.size());
  for (int idx : tr)
    samples.push_back(data::load_sample(manifest, manifest.records[idx], 282));

  detector.init_weights(cfg.seed);
  auto params = detector.named_params();
  auto tensors = param_tensors(params);
  nn::AdamState<float> opt;
  opt.lr = cfg.lr;
  opt.beta1 = cfg.beta1;
  opt.beta2 = cfg.beta2;
  opt.weight_decay = cfg.weight_decay;

  Rng rng(cfg.seed);
  float rate = 0;
  detector.set_trained(true);  // enables detect() for interim evaluation
  for (int step = 1; step <= cfg.max_steps; ++step) {
    const auto& s = samples[rng.uniform_int(
        0, static_cast<int>(samples.size()) - 1)];
    FTensor img = nn::reshape(s.image, {1, 3, 282, 282});
    nn::zero_grads(params);
    FTensor loss =
        detector.loss(img, s.gt_box, rng, detector.config().train_match);
    loss.backward();
    nn::adam_step(tensors, opt);
    if (progress && step % 50 == 0)
      *progress << "detector step " << step << " loss " << loss.data()[0]
                << "\n";
    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      rate = eval_detection_rate(detector, manifest, ev, 0.5f, 0.5f);
      if (progress)
        *progress << "detector step " << step << " held-out rate " << rate
                  << "\n";
      if (rate >= cfg.target_rate) break;
    }
  }
  return rate;
}

}  // namespace llgan::train

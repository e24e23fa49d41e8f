// Command-line front end: dataset generation, detector and GAN training,
// sampling, evaluation and a fast self-test of the numeric invariants.

#include <omp.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "llgan/dataset.hpp"
#include "llgan/gradcheck.hpp"
#include "llgan/metrics.hpp"
#include "llgan/ops.hpp"
#include "llgan/roi_align.hpp"
#include "llgan/style_loss.hpp"
#include "llgan/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace llgan;

namespace {

void write_effective_config(const fs::path& out, const json& cfg) {
  fs::create_directories(out);
  std::ofstream(out / "effective_config.json") << cfg.dump(2) << "\n";
}

// Exit codes: 0 ok, 1 usage, 2 config/data error, 3 runtime failure.
constexpr int kOk = 0, kConfigError = 2, kRuntimeError = 3;

struct CommonOpts {
  std::string out;
  uint64_t seed = 0;
  int threads = 1;
};

void apply_threads(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

int cmd_gen_data(const CommonOpts& c, int n, int styles, int image_size) {
  apply_threads(c.threads);
  try {
    write_effective_config(c.out, json{{"subcommand", "gen-data"},
                                       {"n", n},
                                       {"styles", styles},
                                       {"image_size", image_size},
                                       {"seed", c.seed},
                                       {"out", c.out}});
    auto m = data::generate_synthetic_dataset(n, styles, image_size, c.seed,
                                              c.out);
    std::cout << "wrote " << m.records.size() << " images to " << c.out
              << "\n";
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "gen-data failed: " << e.what() << "\n";
    return kConfigError;
  }
}

int cmd_train_detector(const CommonOpts& c, const std::string& data_dir,
                       int max_steps, float lr, float target_rate) {
  apply_threads(c.threads);
  data::Manifest manifest;
  try {
    manifest = data::load_manifest(data_dir);
    write_effective_config(c.out, json{{"subcommand", "train-detector"},
                                       {"data", data_dir},
                                       {"max_steps", max_steps},
                                       {"lr", lr},
                                       {"target_rate", target_rate},
                                       {"seed", c.seed},
                                       {"out", c.out}});
  } catch (const std::exception& e) {
    std::cerr << "train-detector: " << e.what() << "\n";
    return kConfigError;
  }
  try {
    det::Detector detector;
    train::DetectorTrainConfig cfg;
    cfg.max_steps = max_steps;
    cfg.lr = lr;
    cfg.seed = c.seed;
    cfg.target_rate = target_rate;
    const float rate =
        train::train_detector(detector, manifest, cfg, &std::cout);
    train::save_detector(detector, fs::path(c.out) / "detector");
    std::ofstream(fs::path(c.out) / "detector_report.json")
        << json{{"held_out_detection_rate", rate},
                {"iou_threshold", 0.5},
                {"score_threshold", 0.5}}
               .dump(2)
        << "\n";
    std::cout << "held-out detection rate " << rate << "\n";
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "train-detector failed: " << e.what() << "\n";
    return kRuntimeError;
  }
}

int run_gan_training(train::TrainConfig cfg, const fs::path& out,
                     const std::string& init_ckpt, const json& echo) {
  try {
    write_effective_config(out, echo);
  } catch (const std::exception& e) {
    std::cerr << "cannot write to " << out << ": " << e.what() << "\n";
    return kConfigError;
  }
  train::GanTrainer trainer(cfg);
  try {
    if (!init_ckpt.empty()) trainer.warm_start(init_ckpt);
    if (cfg.phase == train::Phase::llgan)
      trainer.load_detector(cfg.detector_checkpoint);
  } catch (const std::exception& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kConfigError;
  }
  try {
    trainer.run(&std::cout);
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "training failed: " << e.what() << "\n";
    return kRuntimeError;
  }
}

int cmd_generate(const CommonOpts& c, const std::string& ckpt, int n) {
  apply_threads(c.threads);
  train::TrainConfig cfg;
  try {
    auto meta = train::load_checkpoint(ckpt).meta;
    cfg.latent_dim = meta.value("latent_dim", cfg.latent_dim);
    cfg.channel_scale = meta.value("channel_scale", cfg.channel_scale);
    cfg.d_l3_depth = meta.value("d_l3_depth", cfg.d_l3_depth);
    cfg.d_l6_depth = meta.value("d_l6_depth", cfg.d_l6_depth);
    write_effective_config(c.out, json{{"subcommand", "generate"},
                                       {"ckpt", ckpt},
                                       {"n", n},
                                       {"seed", c.seed},
                                       {"out", c.out}});
  } catch (const std::exception& e) {
    std::cerr << "generate: " << e.what() << "\n";
    return kConfigError;
  }
  try {
    train::GanTrainer trainer(cfg);
    trainer.load(ckpt);
    Rng rng(c.seed);
    int written = 0;
    while (written < n) {
      const int b = std::min(4, n - written);
      nn::FTensor z = nn::FTensor::zeros({b, cfg.latent_dim});
      for (auto& v : z.data()) v = rng.normal();
      nn::FTensor imgs = trainer.generator().forward(z, false).detach();
      for (int i = 0; i < b; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "gen_%05d.png", written + i);
        data::save_png((fs::path(c.out) / name).string(),
                       data::from_tensor(nn::slice0(imgs, i)));
      }
      written += b;
    }
    std::cout << "wrote " << written << " samples to " << c.out << "\n";
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "generate failed: " << e.what() << "\n";
    return kRuntimeError;
  }
}

int cmd_evaluate(const CommonOpts& c, const std::string& data_dir,
                 const std::string& ckpt, const std::string& detector_ckpt,
                 const std::string& embedder_ckpt, int n) {
  apply_threads(c.threads);
  data::Manifest manifest;
  train::TrainConfig cfg;
  det::Detector detector;
  try {
    manifest = data::load_manifest(data_dir);
    auto meta = train::load_checkpoint(ckpt).meta;
    cfg.latent_dim = meta.value("latent_dim", cfg.latent_dim);
    cfg.channel_scale = meta.value("channel_scale", cfg.channel_scale);
    cfg.d_l3_depth = meta.value("d_l3_depth", cfg.d_l3_depth);
    cfg.d_l6_depth = meta.value("d_l6_depth", cfg.d_l6_depth);
    train::load_detector_checkpoint(detector, detector_ckpt);
    write_effective_config(c.out, json{{"subcommand", "evaluate"},
                                       {"data", data_dir},
                                       {"ckpt", ckpt},
                                       {"detector", detector_ckpt},
                                       {"n", n},
                                       {"seed", c.seed},
                                       {"out", c.out}});
  } catch (const std::exception& e) {
    std::cerr << "evaluate: " << e.what() << "\n";
    return kConfigError;
  }
  try {
    train::GanTrainer trainer(cfg);
    trainer.load(ckpt);
    metrics::ProxyEmbedder embedder(manifest.styles);
    float emb_acc = -1;
    if (!embedder_ckpt.empty() && fs::exists(embedder_ckpt)) {
      embedder.load(embedder_ckpt);
    } else {
      emb_acc = embedder.train(manifest, 30, c.seed + 101, &std::cout);
      embedder.save(fs::path(c.out) / "embedder");
    }
    auto report = metrics::evaluate_generator(
        trainer.generator(), detector, embedder, manifest, n, c.seed,
        &std::cout);
    json j = report.to_json();
    if (emb_acc >= 0) j["embedder_heldout_acc"] = emb_acc;
    std::ofstream(fs::path(c.out) / "eval_report.json") << j.dump(2) << "\n";
    std::cout << j.dump(2) << "\n";
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "evaluate failed: " << e.what() << "\n";
    return kRuntimeError;
  }
}

// ---------------------------------------------------------------------------
// selftest: the fast numeric invariant suite.

using DTensor = nn::Tensor<double>;

DTensor rand_tensor(nn::Shape shape, Rng& rng, double scale = 1.0) {
  DTensor t = DTensor::zeros(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

bool selftest_run(std::ostream& os) {
  int failures = 0;
  auto check = [&](const std::string& name, bool ok,
                   const std::string& detail = "") {
    os << (ok ? "PASS " : "FAIL ") << name;
    if (!detail.empty()) os << " (" << detail << ")";
    os << "\n";
    if (!ok) ++failures;
  };
  Rng rng(11);

  {
    auto fn = [](const std::vector<DTensor>& p) {
      return nn::sum(nn::conv2d(p[0], p[1], p[2], 2, 1));
    };
    double err = nn::grad_check(
        fn, {rand_tensor({1, 2, 5, 5}, rng), rand_tensor({3, 2, 3, 3}, rng),
             rand_tensor({3}, rng)});
    check("gradcheck conv2d", err <= 1e-3, "max rel err " + std::to_string(err));
  }
  {
    auto fn = [](const std::vector<DTensor>& p) {
      return nn::sum(nn::conv_transpose2d(p[0], p[1], p[2], 2, 1));
    };
    double err = nn::grad_check(
        fn, {rand_tensor({1, 2, 3, 3}, rng), rand_tensor({2, 3, 4, 4}, rng),
             rand_tensor({3}, rng)});
    check("gradcheck conv_transpose2d", err <= 1e-3,
          "max rel err " + std::to_string(err));
  }
  {
    auto fn = [](const std::vector<DTensor>& p) {
      std::vector<double> rm(2, 0.0), rv(2, 1.0);
      auto bn = nn::batchnorm2d(p[0], p[1], p[2], rm, rv, true, 0.1, 1e-5);
      return nn::sum(nn::mul(bn, bn));
    };
    double err = nn::grad_check(
        fn, {rand_tensor({2, 2, 3, 3}, rng), rand_tensor({2}, rng, 0.3),
             rand_tensor({2}, rng, 0.3)});
    check("gradcheck batchnorm2d", err <= 1e-3,
          "max rel err " + std::to_string(err));
  }
  {
    auto fn = [](const std::vector<DTensor>& p) {
      DTensor targets = DTensor::from({2, 1}, {1.0, 0.0});
      return nn::bce_with_logits(nn::linear(p[0], p[1], p[2]), targets);
    };
    double err = nn::grad_check(
        fn, {rand_tensor({2, 3}, rng), rand_tensor({3, 1}, rng),
             rand_tensor({1}, rng)});
    check("gradcheck linear+bce", err <= 1e-3,
          "max rel err " + std::to_string(err));
  }
  {
    auto fn = [](const std::vector<DTensor>& p) {
      return llgan::style::roi_style_distance(nn::gram(p[0]), nn::gram(p[1]),
                                              2, 2);
    };
    double err = nn::grad_check(
        fn, {rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng)});
    check("gradcheck gram+style_distance", err <= 1e-3,
          "max rel err " + std::to_string(err));
  }
  {
    det::Box box{1.2f, 0.8f, 4.5f, 5.1f};
    auto fn = [&](const std::vector<DTensor>& p) {
      return nn::sum(det::roi_align(p[0], box, 1.f, 3, 3, 2));
    };
    double err = nn::grad_check(fn, {rand_tensor({2, 6, 6}, rng)});
    check("gradcheck roi_align", err <= 1e-3,
          "max rel err " + std::to_string(err));
  }
  {
    DTensor f = DTensor::from({1, 3}, {1, 2, 2});
    check("gram fixture [[9]]", std::abs(nn::gram(f).data()[0] - 9.0) == 0.0);
    DTensor gr = DTensor::from({1, 1}, {2});
    DTensor gf = DTensor::from({1, 1}, {0});
    double dk = llgan::style::roi_style_distance(gr, gf, 1, 1).data()[0];
    check("style distance fixture D_k=1", std::abs(dk - 1.0) < 1e-12);
  }
  {
    float v = det::iou({0, 0, 2, 2}, {1, 1, 3, 3});
    check("iou hand case 1/7", std::abs(v - 1.f / 7.f) < 1e-6f);
  }
  {
    std::vector<det::Box> boxes;
    std::vector<float> scores;
    Rng brng(3);
    for (int i = 0; i < 60; ++i) {
      float x = brng.uniform(0, 40), y = brng.uniform(0, 40);
      boxes.push_back({x, y, x + brng.uniform(2, 20), y + brng.uniform(2, 20)});
      scores.push_back(brng.uniform());
    }
    auto got = det::nms(boxes, scores, 0.5f);
    // independently: sort by (score desc, index asc), keep greedily
    std::vector<int> order(boxes.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return scores[a] > scores[b];
    });
    std::vector<int> want;
    for (int i : order) {
      bool keep = true;
      for (int k : want)
        if (det::iou(boxes[i], boxes[k]) > 0.5f) keep = false;
      if (keep) want.push_back(i);
    }
    check("nms vs quadratic oracle", got == want);
  }
  {
    Rng brng(5);
    double worst = 0;
    for (int i = 0; i < 100; ++i) {
      float x = brng.uniform(0, 50), y = brng.uniform(0, 50);
      det::Box a{x, y, x + brng.uniform(4, 40), y + brng.uniform(4, 40)};
      float gx = x + brng.uniform(-5, 5), gy = y + brng.uniform(-5, 5);
      det::Box g{gx, gy, gx + brng.uniform(4, 40), gy + brng.uniform(4, 40)};
      det::Box r = det::decode_box(a, det::encode_box(a, g));
      worst = std::max<double>(worst, std::abs(r.x1 - g.x1));
      worst = std::max<double>(worst, std::abs(r.y1 - g.y1));
      worst = std::max<double>(worst, std::abs(r.x2 - g.x2));
      worst = std::max<double>(worst, std::abs(r.y2 - g.y2));
    }
    check("decode(encode) identity", worst <= 1e-4,
          "max abs err " + std::to_string(worst));
  }
  {
    // RoIAlign against a direct bilinear-sampling oracle.
    DTensor feat = rand_tensor({2, 8, 8}, rng);
    det::Box box{2.3f, 1.1f, 6.7f, 7.2f};
    auto out = det::roi_align(feat, box, 1.f, 7, 7, 2);
    const int h = 8, w = 8;
    double worst = 0;
    for (int ch = 0; ch < 2; ++ch)
      for (int by = 0; by < 7; ++by)
        for (int bx = 0; bx < 7; ++bx) {
          double acc = 0;
          for (int sy = 0; sy < 2; ++sy)
            for (int sx = 0; sx < 2; ++sx) {
              double yy = box.y1 + (by + (sy + 0.5) / 2.0) *
                                       ((box.y2 - box.y1) / 7.0);
              double xx = box.x1 + (bx + (sx + 0.5) / 2.0) *
                                       ((box.x2 - box.x1) / 7.0);
              yy = std::clamp(yy, 0.0, double(h - 1));
              xx = std::clamp(xx, 0.0, double(w - 1));
              int y0 = int(yy), x0 = int(xx);
              int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
              double fy = yy - y0, fx = xx - x0;
              auto at = [&](int yy_, int xx_) {
                return feat.data()[ch * h * w + yy_ * w + xx_];
              };
              acc += (1 - fy) * (1 - fx) * at(y0, x0) +
                     (1 - fy) * fx * at(y0, x1) + fy * (1 - fx) * at(y1, x0) +
                     fy * fx * at(y1, x1);
            }
          worst = std::max(worst,
                           std::abs(acc / 4.0 -
                                    out.data()[ch * 49 + by * 7 + bx]));
        }
    check("roi_align vs bilinear oracle", worst <= 1e-5,
          "max abs err " + std::to_string(worst));
  }
  {
    std::vector<std::vector<double>> uniform(8,
                                             std::vector<double>(4, 0.25));
    double is_u = metrics::inception_score(uniform, 1);
    std::vector<std::vector<double>> onehot;
    for (int i = 0; i < 8; ++i) {
      std::vector<double> row(4, 0.0);
      row[i % 4] = 1.0;
      onehot.push_back(row);
    }
    double is_o = metrics::inception_score(onehot, 1);
    check("IS uniform == 1", std::abs(is_u - 1.0) <= 1e-6);
    check("IS balanced one-hot == K", std::abs(is_o - 4.0) <= 1e-6);
  }
  {
    std::vector<std::vector<double>> a;
    Rng frng(9);
    for (int i = 0; i < 16; ++i) {
      std::vector<double> row(5);
      for (auto& v : row) v = frng.normal();
      a.push_back(row);
    }
    check("FID identical sets == 0", std::abs(metrics::fid(a, a)) <= 1e-4);
  }
  {
    std::vector<std::vector<det::Detection>> imgs;
    imgs.push_back({{det::Box{0, 0, 1, 1}, 0.9f},
                    {det::Box{2, 2, 3, 3}, 0.8f}});
    imgs.push_back({});
    auto st = metrics::detection_eval(imgs, 0.75f);
    check("detection_eval fixture", st.tp == 1 && st.fp == 2 &&
                                        st.images_without_detections == 1);
  }

  os << (failures == 0 ? "selftest: all checks passed\n"
                       : "selftest: " + std::to_string(failures) +
                             " check(s) failed\n");
  return failures == 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LL-GAN: logo synthesis with regional style supervision"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key = value config file; flags win");

  CommonOpts c;

  auto add_common = [&](CLI::App* s) {
    s->add_option("--out", c.out, "output directory")->required();
    s->add_option("--seed", c.seed, "RNG seed");
    s->add_option("--threads", c.threads, "loader/kernel thread count");
  };

  // gen-data
  int n = 64, styles = 10, image_size = 282;
  auto* gen_data = app.add_subcommand("gen-data", "render a synthetic corpus");
  add_common(gen_data);
  gen_data->add_option("--n", n, "number of images");
  gen_data->add_option("--styles", styles, "number of styles");
  gen_data->add_option("--image-size", image_size, "square image size");

  // train-detector
  std::string data_dir;
  int det_steps = 2000;
  float det_lr = 1e-3f, det_target = 0.95f;
  auto* tdet = app.add_subcommand("train-detector",
                                  "train the logo detector on a manifest");
  add_common(tdet);
  tdet->add_option("--data", data_dir, "dataset directory")->required();
  tdet->add_option("--steps", det_steps, "max training steps");
  tdet->add_option("--lr", det_lr, "learning rate");
  tdet->add_option("--target-rate", det_target, "early-stop held-out rate");

  // shared GAN options
  train::TrainConfig gcfg;
  std::string variant = "base", detector_ckpt, init_ckpt, gan_ckpt,
              embedder_ckpt;
  int epochs = 2, batch = 0;
  float channel_scale = 1.0f, lambda_style = 1.0f;

  auto* tdc = app.add_subcommand("train-dcgan", "phase one: DCGAN+ training");
  add_common(tdc);
  tdc->add_option("--data", data_dir, "dataset directory")->required();
  tdc->add_option("--epochs", epochs, "training epochs");
  tdc->add_option("--batch", batch, "batch size (0 = phase default)");
  tdc->add_option("--channel-scale", channel_scale, "width multiplier");
  tdc->add_option("--init", init_ckpt, "warm-start checkpoint");

  auto* tll = app.add_subcommand("train-llgan",
                                 "phase two: detector-guided training");
  add_common(tll);
  tll->add_option("--data", data_dir, "dataset directory")->required();
  tll->add_option("--detector", detector_ckpt, "trained detector checkpoint")
      ->required();
  tll->add_option("--epochs", epochs, "training epochs");
  tll->add_option("--batch", batch, "batch size (0 = phase default)");
  tll->add_option("--channel-scale", channel_scale, "width multiplier");
  tll->add_option("--variant", variant, "base|frcnn|boxes|backbone|full")
      ->check(CLI::IsMember({"base", "frcnn", "boxes", "backbone", "full"}));
  tll->add_option("--lambda-style", lambda_style, "style loss weight");
  tll->add_option("--init", init_ckpt, "warm-start checkpoint (phase one)");

  auto* gen = app.add_subcommand("generate", "sample images from a checkpoint");
  add_common(gen);
  gen->add_option("--ckpt", gan_ckpt, "GAN checkpoint directory")->required();
  gen->add_option("--n", n, "number of samples");

  auto* ev = app.add_subcommand("evaluate", "FID / IS / detection report");
  add_common(ev);
  ev->add_option("--data", data_dir, "real dataset directory")->required();
  ev->add_option("--ckpt", gan_ckpt, "GAN checkpoint directory")->required();
  ev->add_option("--detector", detector_ckpt, "detector checkpoint")
      ->required();
  ev->add_option("--embedder", embedder_ckpt, "proxy embedder checkpoint");
  ev->add_option("--n", n, "number of generated samples");

  auto* st = app.add_subcommand("selftest", "fast numeric invariant suite");
  (void)st;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (gen_data->parsed()) return cmd_gen_data(c, n, styles, image_size);
  if (tdet->parsed())
    return cmd_train_detector(c, data_dir, det_steps, det_lr, det_target);
  if (tdc->parsed() || tll->parsed()) {
    gcfg.phase = tdc->parsed() ? train::Phase::dcgan : train::Phase::llgan;
    gcfg.epochs = epochs;
    gcfg.batch_size = batch;
    gcfg.channel_scale = channel_scale;
    gcfg.seed = c.seed;
    gcfg.dataset_dir = data_dir;
    gcfg.checkpoint_dir = c.out;
    gcfg.detector_checkpoint = detector_ckpt;
    gcfg.lambda_style = lambda_style;
    try {
      gcfg.flags = train::variant_flags(variant);
    } catch (const std::exception& e) {
      std::cerr << e.what() << "\n";
      return 1;
    }
    apply_threads(c.threads);
    json echo{{"subcommand", tdc->parsed() ? "train-dcgan" : "train-llgan"},
              {"data", data_dir},
              {"epochs", epochs},
              {"batch", gcfg.effective_batch()},
              {"channel_scale", channel_scale},
              {"variant", variant},
              {"lambda_style", lambda_style},
              {"detector", detector_ckpt},
              {"init", init_ckpt},
              {"seed", c.seed},
              {"out", c.out}};
    return run_gan_training(gcfg, c.out, init_ckpt, echo);
  }
  if (gen->parsed()) return cmd_generate(c, gan_ckpt, n);
  if (ev->parsed())
    return cmd_evaluate(c, data_dir, gan_ckpt, detector_ckpt, embedder_ckpt,
                        n);
  if (st->parsed()) return selftest_run(std::cout) ? 0 : kRuntimeError;
  return 1;
}

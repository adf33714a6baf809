#include "polyseg/trainer.hpp"

#include "polyseg/image.hpp"
#include "polyseg/losses.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

namespace polyseg {

namespace fs = std::filesystem;
using namespace ops;

namespace {

std::string rng_to_string(std::mt19937_64& gen) {
  std::ostringstream os;
  os << gen;
  return os.str();
}

// threshold-free dice of one probability map against a binary mask
double soft_dice(const std::vector<double>& probs, const std::vector<double>& gt) {
  double tp = 0, sp = 0, sg = 0;
  for (size_t i = 0; i < probs.size(); ++i) {
    tp += probs[i] * gt[i];
    sp += probs[i];
    sg += gt[i];
  }
  return (sp + sg) > 0 ? 2.0 * tp / (sp + sg) : 1.0;
}

// forward the whole dataset in eval mode and average the train-resolution dice
double eval_train_dice(SegModel& model, const std::vector<data::SamplePair>& set,
                       int64_t input_size, int64_t batch_size) {
  model.train(false);
  double acc = 0.0;
  for (size_t i = 0; i < set.size(); i += static_cast<size_t>(batch_size)) {
    std::vector<const data::SamplePair*> chunk;
    for (size_t k = i; k < std::min(set.size(), i + static_cast<size_t>(batch_size)); ++k)
      chunk.push_back(&set[k]);
    auto [images, masks] = data::assemble_batch(chunk, input_size);
    PredictionTriple pred = model.forward(images);
    Tensor probs = sigmoid(pred.final_logits);
    int64_t px = input_size * input_size;
    for (size_t k = 0; k < chunk.size(); ++k) {
      std::vector<double> p(probs.data().begin() + static_cast<int64_t>(k) * px,
                            probs.data().begin() + static_cast<int64_t>(k + 1) * px);
      std::vector<double> g(masks.data().begin() + static_cast<int64_t>(k) * px,
                            masks.data().begin() + static_cast<int64_t>(k + 1) * px);
      acc += soft_dice(p, g);
    }
  }
  model.train(true);
  return acc / static_cast<double>(set.size());
}

}  // namespace

TrainResult train(const Config& cfg, const std::string& data_root,
                  const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::vector<data::SamplePair> raw = data::load_folder(data_root);
  std::vector<data::SamplePair> set;
  set.reserve(raw.size());
  for (const auto& p : raw)
    set.push_back(data::preprocess(p, cfg.train.input_size, cfg.norm));

  nn::Rng init_rng(cfg.seed);
  SegModel model(init_rng, cfg);
  model.train(true);
  optim::AdamW opt(model.parameters(), cfg.train.lr, cfg.train.weight_decay);
  LossWeights lw = cfg.effective_loss();

  std::mt19937_64 loop_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  data::MultiScaleSampler scale_sampler(cfg.scales, cfg.seed ^ 0xa5a5a5a5ULL);

  std::ofstream log(fs::path(out_dir) / "train_log.csv");
  log << "epoch,step,lr,loss,loss_p1,loss_p2,loss_p3,wbce,dice,focal,grad_norm\n";
  log.precision(10);

  std::vector<double> epoch_losses;
  double train_mdice = 0.0;
  int64_t n = static_cast<int64_t>(set.size());

  for (int64_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    double lr = optim::scheduled_lr(cfg.train.lr, cfg.train.decay_rate,
                                    cfg.train.decay_every, epoch);
    opt.set_lr(lr);

    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), loop_rng);

    double epoch_loss = 0.0;
    int64_t steps = 0;
    for (int64_t start = 0; start < n; start += cfg.train.batch_size) {
      int64_t stop = std::min(n, start + cfg.train.batch_size);
      std::vector<const data::SamplePair*> batch;
      std::string batch_ids;
      for (int64_t i = start; i < stop; ++i) {
        batch.push_back(&set[static_cast<size_t>(order[static_cast<size_t>(i)])]);
        batch_ids += " " + batch.back()->id;
      }
      int64_t size = cfg.train.multiscale
                         ? scale_sampler.next_size(cfg.train.input_size)
                         : cfg.train.input_size;
      auto [images, masks] = data::assemble_batch(batch, size);

      PredictionTriple pred = model.forward(images);
      LossBreakdown bd;
      Tensor loss = total_loss(pred.p1, pred.p2, pred.p3, masks, lw, &bd);
      if (std::isnan(bd.total))
        throw std::runtime_error("NaN loss at epoch " + std::to_string(epoch) +
                                 " step " + std::to_string(steps) +
                                 "; offending batch:" + batch_ids);
      opt.zero_grad();
      loss.backward();
      double gnorm = optim::clip_global_norm(opt.params(), cfg.train.grad_clip);
      opt.step();

      log << epoch << "," << steps << "," << lr << "," << bd.total << ","
          << bd.p1 << "," << bd.p2 << "," << bd.p3 << "," << bd.wbce << ","
          << bd.dice << "," << bd.focal << "," << gnorm << "\n";
      epoch_loss += bd.total;
      ++steps;
    }
    epoch_losses.push_back(steps > 0 ? epoch_loss / static_cast<double>(steps)
                                     : 0.0);
    if (cfg.train.eval_every > 0 && (epoch + 1) % cfg.train.eval_every == 0) {
      double d = eval_train_dice(model, set, cfg.train.input_size,
                                 cfg.train.batch_size);
      log << epoch << ",eval,,,,,,,,," << d << "\n";
    }
  }
  log.flush();

  train_mdice = eval_train_dice(model, set, cfg.train.input_size,
                                cfg.train.batch_size);

  std::string ckpt_path = (fs::path(out_dir) / "checkpoint.bin").string();
  save_checkpoint(ckpt_path, snapshot(model, &opt, cfg.train.epochs,
                                      rng_to_string(loop_rng)));

  nlohmann::json manifest;
  manifest["config"] = nlohmann::json::parse(cfg.to_json());
  manifest["data_root"] = data_root;
  manifest["samples"] = n;
  manifest["epoch_losses"] = epoch_losses;
  manifest["train_mdice"] = train_mdice;
  std::ofstream mf(fs::path(out_dir) / "manifest.json");
  mf << manifest.dump(2) << "\n";

  TrainResult result;
  result.checkpoint_path = ckpt_path;
  result.epoch_losses = std::move(epoch_losses);
  result.final_train_mdice = train_mdice;
  return result;
}

namespace {

// prediction maps for a folder of raw samples, resized to native resolution
std::vector<std::pair<std::string, metrics::Map2d>> predict_samples(
    SegModel& model, const Config& cfg,
    const std::vector<data::SamplePair>& raw) {
  model.train(false);
  std::vector<std::pair<std::string, metrics::Map2d>> out;
  for (const auto& sample : raw) {
    data::SamplePair prep = data::preprocess(sample, cfg.train.input_size, cfg.norm);
    std::vector<const data::SamplePair*> one = {&prep};
    auto [images, masks] = data::assemble_batch(one, cfg.train.input_size);
    PredictionTriple pred = model.forward(images);
    Tensor probs = sigmoid(pred.final_logits);
    metrics::Map2d native(sample.h, sample.w);
    native.v = img::resize_bilinear(probs.data(), cfg.train.input_size,
                                    cfg.train.input_size, sample.h, sample.w);
    out.emplace_back(sample.id, std::move(native));
  }
  return out;
}

std::unique_ptr<SegModel> model_from_checkpoint(const std::string& ckpt_path,
                                                Config* cfg_out) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  Config cfg = Config::from_json(ckpt.config_json);
  nn::Rng rng(cfg.seed);
  auto model = std::make_unique<SegModel>(rng, cfg);
  restore(*model, nullptr, ckpt);
  model->train(false);
  if (cfg_out) *cfg_out = cfg;
  return model;
}

}  // namespace

metrics::MetricReport evaluate_checkpoint(const std::string& ckpt_path,
                                          const std::string& data_root,
                                          std::optional<double> threshold,
                                          const std::string& report_path) {
  Config cfg;
  auto model = model_from_checkpoint(ckpt_path, &cfg);
  std::vector<data::SamplePair> raw = data::load_folder(data_root);

  metrics::MetricReport report;
  for (auto& [id, pred] : predict_samples(*model, cfg, raw)) {
    const data::SamplePair* sample = nullptr;
    for (const auto& s : raw)
      if (s.id == id) sample = &s;
    metrics::Map2d gt(sample->h, sample->w);
    gt.v = sample->mask;
    report.per_image.push_back(metrics::score_pair(id, pred, gt, threshold));
    double gsum = 0;
    for (double v : gt.v) gsum += v;
    if (gsum == 0.0) ++report.wfb_undefined_count;
  }
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    out << report.csv();
  }
  return report;
}

void predict_dir(const std::string& ckpt_path, const std::string& images_dir,
                 const std::string& out_dir, const std::string& gts_dir) {
  Config cfg;
  auto model = model_from_checkpoint(ckpt_path, &cfg);
  fs::create_directories(out_dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(images_dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw std::invalid_argument("predict: no images in " + images_dir);

  for (const auto& path : files) {
    img::RgbImage im = img::read_rgb(path.string());
    data::SamplePair sample;
    sample.id = path.stem().string();
    sample.h = im.h;
    sample.w = im.w;
    sample.image.resize(static_cast<size_t>(3 * im.h * im.w));
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t i = 0; i < im.h * im.w; ++i)
        sample.image[static_cast<size_t>(c * im.h * im.w + i)] =
            static_cast<double>(im.pixels[static_cast<size_t>(i * 3 + c)]) / 255.0;
    sample.mask.assign(static_cast<size_t>(im.h * im.w), 0.0);

    data::SamplePair prep = data::preprocess(sample, cfg.train.input_size, cfg.norm);
    std::vector<const data::SamplePair*> one = {&prep};
    auto [images, masks] = data::assemble_batch(one, cfg.train.input_size);
    PredictionTriple pred = model->forward(images);
    Tensor probs = sigmoid(pred.final_logits);
    std::vector<double> native =
        img::resize_bilinear(probs.data(), cfg.train.input_size,
                             cfg.train.input_size, im.h, im.w);

    img::GrayImage out;
    out.h = im.h;
    out.w = im.w;
    out.pixels.resize(native.size());
    for (size_t i = 0; i < native.size(); ++i)
      out.pixels[i] = static_cast<uint8_t>(std::lround(255.0 * native[i]));
    img::write_gray((fs::path(out_dir) / (sample.id + ".png")).string(), out);

    if (!gts_dir.empty()) {
      fs::path gt_path = fs::path(gts_dir) / (sample.id + ".png");
      if (!fs::exists(gt_path))
        throw std::invalid_argument("predict: missing ground truth for " +
                                    sample.id);
      img::GrayImage gt = img::read_gray(gt_path.string());
      if (gt.h != im.h || gt.w != im.w)
        throw std::invalid_argument("predict: gt size mismatch for " + sample.id);
      img::RgbImage overlay;
      overlay.h = im.h;
      overlay.w = im.w;
      overlay.pixels.assign(static_cast<size_t>(3 * im.h * im.w), 0);
      for (int64_t i = 0; i < im.h * im.w; ++i) {
        bool p = native[static_cast<size_t>(i)] >= 0.5;
        bool g = gt.pixels[static_cast<size_t>(i)] > 127;
        uint8_t r = 0, gr = 0, b = 0;
        if (p && g) gr = 255;          // correct polyp
        else if (p && !g) r = 255;     // incorrect detection
        else if (!p && g) { r = 255; gr = 255; }  // missed polyp
        overlay.pixels[static_cast<size_t>(i * 3 + 0)] = r;
        overlay.pixels[static_cast<size_t>(i * 3 + 1)] = gr;
        overlay.pixels[static_cast<size_t>(i * 3 + 2)] = b;
      }
      img::write_rgb((fs::path(out_dir) / (sample.id + "_overlay.png")).string(),
                     overlay);
    }
  }
}

namespace {

int worker_count(size_t jobs) {
  const char* det = std::getenv("POLYSEG_DETERMINISTIC");
  if (det && det[0] != '\0' && det[0] != '0') return 1;
  const char* env = std::getenv("POLYSEG_THREADS");
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  unsigned n = env ? static_cast<unsigned>(std::atoi(env)) : hw;
  if (n < 1) n = 1;
  return static_cast<int>(std::min<size_t>(n, jobs));
}

}  // namespace

std::vector<AblationRun> ablate(const Config& cfg, const std::string& data_root,
                                const std::string& out_dir,
                                const std::vector<uint64_t>& seeds,
                                const std::string& variant_set) {
  std::vector<Ablation> variants;
  if (variant_set == "structural")
    variants = {Ablation::kNone, Ablation::kNoFcam, Ablation::kNoFsam,
                Ablation::kNoCpm};
  else if (variant_set == "loss")
    variants = {Ablation::kNone, Ablation::kLossNoDiceFocal,
                Ablation::kLossNoWbce};
  else if (variant_set == "all")
    variants = {Ablation::kNone,           Ablation::kNoFcam,
                Ablation::kNoFsam,         Ablation::kNoCpm,
                Ablation::kLossNoDiceFocal, Ablation::kLossNoWbce};
  else
    throw std::invalid_argument("ablate: variant set must be structural|loss|all");

  struct Job {
    Ablation variant;
    uint64_t seed;
  };
  std::vector<Job> jobs;
  for (Ablation v : variants)
    for (uint64_t s : seeds) jobs.push_back({v, s});
  std::vector<AblationRun> results(jobs.size());

  fs::create_directories(out_dir);
  auto run_job = [&](size_t idx) {
    const Job& job = jobs[idx];
    Config run_cfg = cfg;
    run_cfg.ablation = job.variant;
    run_cfg.seed = job.seed;
    std::string run_dir =
        (fs::path(out_dir) /
         (to_string(job.variant) + "_seed" + std::to_string(job.seed)))
            .string();
    TrainResult tr = train(run_cfg, data_root, run_dir);
    metrics::MetricReport report = evaluate_checkpoint(
        tr.checkpoint_path, data_root, {},
        (fs::path(run_dir) / "report.csv").string());
    metrics::ImageMetrics mean = report.dataset_means();
    results[idx] = {to_string(job.variant), job.seed, mean.dice, mean.iou};
  };

  int workers = worker_count(jobs.size());
  if (workers <= 1) {
    for (size_t i = 0; i < jobs.size(); ++i) run_job(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int t = 0; t < workers; ++t)
      pool.emplace_back([&]() {
        for (;;) {
          size_t i = next.fetch_add(1);
          if (i >= jobs.size()) return;
          run_job(i);
        }
      });
    for (auto& th : pool) th.join();
  }

  std::ofstream csv(fs::path(out_dir) / "ablation.csv");
  csv << "variant,seed,mdice,miou\n";
  csv.precision(6);
  csv << std::fixed;
  for (const auto& r : results)
    csv << r.variant << "," << r.seed << "," << r.mdice << "," << r.miou << "\n";
  return results;
}

std::string format_ablation_table(const std::vector<AblationRun>& runs) {
  // mean per variant over seeds, printed in the named-variant order
  std::vector<std::string> order = {"none",   "no_fcam",            "no_fsam",
                                    "no_cpm", "loss_no_dice_focal", "loss_no_wbce"};
  std::map<std::string, std::pair<double, double>> acc;
  std::map<std::string, int> counts;
  for (const auto& r : runs) {
    acc[r.variant].first += r.mdice;
    acc[r.variant].second += r.miou;
    counts[r.variant]++;
  }
  std::ostringstream os;
  os << "variant              mDic(%)  mIoU(%)  (mean over seeds)\n";
  for (const auto& name : order) {
    if (!counts.count(name)) continue;
    double n = counts[name];
    std::string label = name == "none" ? "Final" : name;
    os << label;
    for (size_t i = label.size(); i < 21; ++i) os << ' ';
    std::ostringstream c1, c2;
    c1.precision(1);
    c2.precision(1);
    c1 << std::fixed << 100.0 * acc[name].first / n;
    c2 << std::fixed << 100.0 * acc[name].second / n;
    os << c1.str();
    for (size_t i = c1.str().size(); i < 9; ++i) os << ' ';
    os << c2.str() << "\n";
  }
  return os.str();
}

}  // namespace polyseg

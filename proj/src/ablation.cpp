#include "ganforge/ablation.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace ganforge {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

// ---- FidProbe --------------------------------------------------------------

FidProbe::FidProbe(const Tensor& real_images, Extractor extractor, std::size_t n_fake, std::uint64_t seed)
    : extractor_(extractor), n_fake_(n_fake), seed_(seed) {
  if (real_images.rank() != 4 || real_images.dim(0) < 2) {
    throw ValidationError("FidProbe: need at least two real images in N x C x H x W form");
  }
  if (n_fake_ == 0) n_fake_ = real_images.dim(0);
  if (n_fake_ < 2) throw ValidationError("FidProbe: need at least two generated samples");
  real_ = extract_features(real_images, extractor_, Source::real);
}

double FidProbe::measure(const Network& generator) const {
  const Tensor fake = generate(generator, n_fake_, seed_);
  return fid(real_, extract_features(fake, extractor_, Source::synthetic));
}

// ---- AblationConfig --------------------------------------------------------

void AblationConfig::validate() const {
  base.validate();
  if (modes.empty()) throw ValidationError("ablation: at least one loss mode is required");
  if (seeds.empty()) throw ValidationError("ablation: at least one seed is required");
  for (const auto& m : modes) {
    TrainConfig probe = base;
    probe.set_loss_mode(m);
  }
  Extractor::parse(extractor);
}

nlohmann::json AblationConfig::to_json() const {
  return {{"base", base.to_json()}, {"modes", modes}, {"seeds", seeds}, {"extractor", extractor}, {"n_fake", n_fake}};
}

// ---- AblationReport --------------------------------------------------------

std::vector<AblationSummary> AblationReport::summarize() const {
  std::vector<AblationSummary> rows;
  std::map<std::string, std::vector<double>> by_mode;
  for (const auto& c : cells) {
    if (by_mode.find(c.mode) == by_mode.end()) rows.push_back({c.mode});
    by_mode[c.mode].push_back(c.fid_final);
  }
  double base_mean = 0.0;
  bool have_base = false;
  for (auto& r : rows) {
    const auto& v = by_mode[r.mode];
    r.n = v.size();
    double s = 0.0;
    for (double x : v) s += x;
    r.fid_mean = s / static_cast<double>(r.n);
    double ss = 0.0;
    for (double x : v) ss += (x - r.fid_mean) * (x - r.fid_mean);
    r.fid_std = r.n > 1 ? std::sqrt(ss / static_cast<double>(r.n - 1)) : 0.0;
    if (r.mode == baseline) {
      base_mean = r.fid_mean;
      have_base = true;
    }
  }
  for (auto& r : rows) {
    r.delta_pct = have_base && base_mean != 0.0 ? 100.0 * (r.fid_mean - base_mean) / base_mean : 0.0;
  }
  return rows;
}

std::string AblationReport::to_csv() const {
  std::ostringstream os;
  os.precision(12);
  os << "mode,seed,fid_epoch1,fid_final\n";
  for (const auto& c : cells) os << c.mode << ',' << c.seed << ',' << c.fid_first << ',' << c.fid_final << '\n';
  return os.str();
}

std::string AblationReport::to_markdown() const {
  const auto rows = summarize();
  std::ostringstream os;
  os << "| mode | seeds | fid_final | delta_vs_" << baseline << " |\n";
  os << "|---|---|---|---|\n";
  for (const auto& r : rows) {
    os << "| " << r.mode << " | " << r.n << " | " << fixed(r.fid_mean, 4) << " ± " << fixed(r.fid_std, 4) << " | "
       << (r.delta_pct >= 0 ? "+" : "") << fixed(r.delta_pct, 1) << "% |\n";
  }
  os << '\n';
  for (const auto& r : rows) {
    if (r.mode == baseline) continue;
    os << "- " << r.mode << (r.delta_pct <= 0 ? " lowers" : " raises") << " FID by " << fixed(std::abs(r.delta_pct), 1)
       << "% relative to " << baseline << " (" << extractor_id << " features)\n";
  }
  return os.str();
}

AblationReport run_stabilizer_ablation(const Dataset& data, const AblationConfig& config,
                                       const std::function<void(const AblationCell&)>& on_cell) {
  config.validate();
  data.validate();
  Extractor extractor = Extractor::parse(config.extractor);
  if (extractor.kind == ExtractorKind::classifier_features) {
    throw PrerequisiteError("ablation: classifier features need a trained classifier; use raw-pixels or rp:<D>");
  }
  AblationReport report;
  report.baseline = config.modes.front();
  for (const auto seed : config.seeds) {
    const FidProbe probe(data.images, extractor, config.n_fake, derive_seed(seed, 0x666964));
    report.extractor_id = probe.extractor_id();
    for (const auto& mode : config.modes) {
      TrainConfig cfg = config.base;
      cfg.set_loss_mode(mode);
      cfg.seed = seed;
      AblationCell cell{mode, seed};
      TrainCallbacks cb;
      cb.on_epoch = [&](const GanState& st, int epoch, const TrainHistory&) {
        if (epoch == 1) cell.fid_first = probe.measure(st.generator);
      };
      const TrainResult r = train(cfg, data, cb);
      cell.fid_final = probe.measure(r.state.generator);
      if (on_cell) on_cell(cell);
      report.cells.push_back(cell);
    }
  }
  return report;
}

}  // namespace ganforge

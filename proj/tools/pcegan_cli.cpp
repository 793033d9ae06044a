// Batch front end for the attribute enhancement pipeline.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pcegan/checkpoint.hpp"
#include "pcegan/config.hpp"
#include "pcegan/critic.hpp"
#include "pcegan/distortion.hpp"
#include "pcegan/generator.hpp"
#include "pcegan/metrics.hpp"
#include "pcegan/objectives.hpp"
#include "pcegan/patch.hpp"
#include "pcegan/ply_io.hpp"
#include "pcegan/pointcloud.hpp"
#include "pcegan/trainer.hpp"

namespace fs = std::filesystem;
using namespace pcegan;

namespace {

using Scalar = float;  // training/inference precision

GeneratorConfig generator_config(const ConfigFile& cfg, int k) {
  GeneratorConfig g;
  g.k = k;
  g.scfe_lp = cfg.get_int("gen.scfe_lp", g.scfe_lp);
  g.feat = cfg.get_int("gen.feat", g.feat);
  g.heads = cfg.get_int("gen.heads", g.heads);
  g.gsce_h1 = cfg.get_int("gen.gsce_h1", g.gsce_h1);
  g.gsce_h2 = cfg.get_int("gen.gsce_h2", g.gsce_h2);
  g.fs_hidden = cfg.get_int("gen.fs_hidden", g.fs_hidden);
  g.fs_hidden2 = cfg.get_int("gen.fs_hidden2", g.fs_hidden2);
  g.residual_output = cfg.get_bool("gen.residual_output", g.residual_output);
  g.zero_init_final = cfg.get_bool("gen.zero_init_final", g.zero_init_final);
  g.gfp_softmax = cfg.get_bool("gen.gfp_softmax", g.gfp_softmax);
  g.slope = cfg.get_double("gen.slope", g.slope);
  return g;
}

CriticConfig critic_config(const ConfigFile& cfg, int k) {
  CriticConfig c;
  c.k = k;
  c.w1 = cfg.get_int("critic.w1", c.w1);
  c.w2 = cfg.get_int("critic.w2", c.w2);
  c.mlp_hidden = cfg.get_int("critic.mlp_hidden", c.mlp_hidden);
  c.slope = cfg.get_double("critic.slope", c.slope);
  return c;
}

LossConfig loss_config(const ConfigFile& cfg) {
  LossConfig l;
  l.beta = cfg.get_double("loss.beta", l.beta);
  l.omega = cfg.get_double("loss.omega", l.omega);
  return l;
}

ConfigFile load_config(const std::string& path,
                       const std::vector<std::string>& overrides) {
  ConfigFile cfg = path.empty() ? ConfigFile() : ConfigFile::parse_file(path);
  for (const auto& kv : overrides) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw CLI::ValidationError("--set", "expected key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

struct ChannelPsnr {
  double y, cb, cr, combined;
};

ChannelPsnr measure_psnr(const PointCloud& reference, const PointCloud& test) {
  if (reference.size() != test.size())
    throw std::runtime_error("eval: cloud size mismatch");
  std::vector<double> a, b;
  a.reserve(reference.size());
  b.reserve(reference.size());
  ChannelPsnr out{};
  double per[3];
  for (int c = 0; c < 3; ++c) {
    a.clear();
    b.clear();
    for (size_t i = 0; i < reference.size(); ++i) {
      a.push_back(reference.attributes[i][c]);
      b.push_back(test.attributes[i][c]);
    }
    per[c] = psnr(a, b);
  }
  out.y = per[0];
  out.cb = per[1];
  out.cr = per[2];
  auto cap = [](double p) { return std::isfinite(p) ? p : kPsnrCap; };
  out.combined = ycbcr_psnr(cap(per[0]), cap(per[1]), cap(per[2]));
  return out;
}

// ---- distort ------------------------------------------------------------

int run_distort(const std::string& in, const std::string& out, int qp,
                int smoothing_k, uint64_t seed, std::string sidecar) {
  DistortionProfile profile;
  profile.qp = qp;
  profile.smoothing_k = smoothing_k;
  profile.seed = seed;
  PointCloud rgb = load_ply(in);
  PointCloud ycc = rgb_to_ycbcr(rgb);
  PointCloud dist = distort(ycc, profile);
  double bpp = bitrate_proxy(dist, profile);
  save_ply(ycbcr_to_rgb(dist), out);
  if (sidecar.empty()) sidecar = out + ".info";
  std::ofstream os(sidecar);
  if (!os) throw std::runtime_error("distort: cannot write " + sidecar);
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "{ \"qp\": %d, \"step\": %.9g, \"smoothing_k\": %d, "
                "\"seed\": %llu, \"bitrate_proxy_bpp\": %.9g }\n",
                profile.qp, profile.step(), profile.smoothing_k,
                static_cast<unsigned long long>(profile.seed), bpp);
  os << buf;
  std::cout << "distorted " << in << " -> " << out << " (qp " << qp << ", "
            << bpp << " bpp proxy)\n";
  return 0;
}

// ---- patchify -----------------------------------------------------------

int run_patchify(const std::string& distorted_path, const std::string& out,
                 const std::string& original_path, int n, int ol, int num_nei) {
  PointCloud distorted = rgb_to_ycbcr(load_ply(distorted_path));
  const size_t N = distorted.size();
  if (n < 1 || static_cast<size_t>(n) > N)
    throw std::runtime_error("patchify: need 1 <= n <= N");
  int m = static_cast<int>((N * static_cast<size_t>(ol)) / n);
  if (m < 2) throw std::runtime_error("patchify: cloud too small for patching");
  if (num_nei >= m) num_nei = m - 1;

  PointCloud original;
  const PointCloud* orig_ptr = nullptr;
  if (!original_path.empty()) {
    original = rgb_to_ycbcr(load_ply(original_path));
    orig_ptr = &original;
  }
  PatchSet set = build_patch_set(distorted, m, ol, num_nei, orig_ptr);
  save_patch_set(set, out);
  std::cout << "wrote " << set.patches.size() << " patches of "
            << set.patches[0].size() << " points to " << out << "\n";
  return 0;
}

// ---- train --------------------------------------------------------------

int run_train(const std::string& patches_path, const std::string& config_path,
              const std::vector<std::string>& overrides,
              const std::string& ckpt_dir, const std::string& metrics_path,
              long seed_flag, const std::string& channel_flag) {
  ConfigFile cfg = load_config(config_path, overrides);
  if (seed_flag >= 0) cfg.set("train.seed", std::to_string(seed_flag));
  if (!channel_flag.empty()) cfg.set("train.channel", channel_flag);
  TrainConfig tc = TrainConfig::from_config(cfg);
  GeneratorConfig gc = generator_config(cfg, tc.k);
  CriticConfig cc = critic_config(cfg, tc.k);
  LossConfig lc = loss_config(cfg);

  PatchSet set = load_patch_set(patches_path);
  auto samples = make_train_samples<Scalar>(set, tc.channel, tc.k);
  Trainer<Scalar> trainer(tc, gc, cc, lc);
  auto log = trainer.train(samples);

  if (!metrics_path.empty()) {
    std::ofstream os(metrics_path);
    if (!os) throw std::runtime_error("train: cannot write " + metrics_path);
    write_metrics_csv(os, log);
  }

  fs::path dir = fs::path(ckpt_dir) / channel_name(tc.channel);
  fs::create_directories(dir);
  auto meta = gc.to_meta();
  meta["channel"] = channel_name(tc.channel);
  meta["patch_n"] = std::to_string(tc.n);
  meta["patch_ol"] = std::to_string(tc.ol);
  meta["patch_num_nei"] = std::to_string(tc.num_nei);
  save_checkpoint((dir / "generator.ckpt").string(), trainer.generator().params, meta);
  auto cmeta = cc.to_meta();
  cmeta["channel"] = channel_name(tc.channel);
  save_checkpoint((dir / "critic.ckpt").string(), trainer.critic().params, cmeta);

  if (!log.empty())
    std::cout << "trained " << channel_name(tc.channel) << " channel: "
              << log.back().step << " steps, final val PSNR "
              << log.back().val_psnr << " dB\n";
  return 0;
}

// ---- enhance ------------------------------------------------------------

int run_enhance(const std::string& in, const std::string& ckpt_dir,
                const std::string& out, int n_flag, int ol_flag, int nei_flag) {
  PointCloud ycc = rgb_to_ycbcr(load_ply(in));

  std::vector<std::unique_ptr<GeneratorModel<Scalar>>> owned;
  std::array<const GeneratorModel<Scalar>*, 3> models{nullptr, nullptr, nullptr};
  int n = n_flag, ol = ol_flag, num_nei = nei_flag;
  const char* names[3] = {"Y", "Cb", "Cr"};
  for (int c = 0; c < 3; ++c) {
    fs::path p = fs::path(ckpt_dir) / names[c] / "generator.ckpt";
    if (!fs::exists(p)) continue;
    auto meta = read_checkpoint_meta(p.string());
    GeneratorConfig gc = GeneratorConfig::from_meta(meta);
    auto mdl = std::make_unique<GeneratorModel<Scalar>>(gc);
    load_checkpoint(p.string(), mdl->params);
    auto geti = [&](const char* key, int& dst) {
      auto it = meta.find(key);
      if (dst <= 0 && it != meta.end()) dst = std::stoi(it->second);
    };
    geti("patch_n", n);
    geti("patch_ol", ol);
    geti("patch_num_nei", num_nei);
    models[c] = mdl.get();
    owned.push_back(std::move(mdl));
  }
  if (owned.empty())
    throw std::runtime_error("enhance: no generator checkpoints under " + ckpt_dir);
  if (n <= 0) n = 2048;
  if (ol <= 0) ol = 2;
  if (num_nei <= 0) num_nei = 6;

  PointCloud enhanced = enhance_cloud<Scalar>(ycc, models, n, ol, num_nei);
  save_ply(ycbcr_to_rgb(enhanced), out);
  std::cout << "enhanced " << in << " -> " << out << "\n";
  return 0;
}

// ---- eval ---------------------------------------------------------------

struct ScorePair {
  double anchor = 0, test = 0;
  bool has_test = false;
};

std::vector<ScorePair> load_scores(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("eval: cannot open scores file " + path);
  std::vector<ScorePair> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ScorePair sp;
    if (!(ls >> sp.anchor)) throw std::runtime_error("eval: bad scores line: " + line);
    if (ls >> sp.test) sp.has_test = true;
    out.push_back(sp);
  }
  return out;
}

int run_eval(const std::string& original_path,
             const std::vector<std::string>& distorted,
             const std::vector<std::string>& enhanced,
             const std::vector<double>& bitrates, const std::string& out_csv,
             const std::string& sequence, const std::string& scores_path,
             const std::string& rd_prefix) {
  if (distorted.empty()) throw CLI::ValidationError("--distorted", "need at least one rate point");
  if (bitrates.size() != distorted.size())
    throw CLI::ValidationError("--bitrates", "count must match --distorted");
  if (!enhanced.empty() && enhanced.size() != distorted.size())
    throw CLI::ValidationError("--enhanced", "count must match --distorted");

  PointCloud orig = rgb_to_ycbcr(load_ply(original_path));
  std::vector<ScorePair> scores;
  if (!scores_path.empty()) {
    scores = load_scores(scores_path);
    if (scores.size() != distorted.size())
      throw std::runtime_error("eval: scores row count must match rate points");
  }

  std::ofstream os(out_csv);
  if (!os) throw std::runtime_error("eval: cannot write " + out_csv);
  os << "# pcegan eval csv v1\n";
  os << "sequence,rate_point,variant,bitrate,psnr_y,psnr_cb,psnr_cr,psnr_ycbcr";
  if (!scores.empty()) os << ",ext_score";
  os << "\n";

  RDCurve anchor_y, anchor_c, test_y, test_c;
  char buf[320];
  auto emit = [&](size_t i, const char* variant, const ChannelPsnr& p,
                  const ScorePair* sp, bool is_test) {
    std::snprintf(buf, sizeof(buf), "%s,%zu,%s,%.9g,%.6f,%.6f,%.6f,%.6f",
                  sequence.c_str(), i, variant, bitrates[i], p.y, p.cb, p.cr,
                  p.combined);
    os << buf;
    if (sp) {
      std::snprintf(buf, sizeof(buf), ",%.9g", is_test ? sp->test : sp->anchor);
      os << buf;
    }
    os << "\n";
  };

  for (size_t i = 0; i < distorted.size(); ++i) {
    ChannelPsnr pa = measure_psnr(orig, rgb_to_ycbcr(load_ply(distorted[i])));
    emit(i, "anchor", pa, scores.empty() ? nullptr : &scores[i], false);
    anchor_y.points.push_back({bitrates[i], pa.y});
    anchor_c.points.push_back({bitrates[i], pa.combined});
    if (!enhanced.empty()) {
      ChannelPsnr pt = measure_psnr(orig, rgb_to_ycbcr(load_ply(enhanced[i])));
      emit(i, "test", pt, scores.empty() ? nullptr : &scores[i], true);
      test_y.points.push_back({bitrates[i], pt.y});
      test_c.points.push_back({bitrates[i], pt.combined});
    }
  }

  if (!rd_prefix.empty()) {
    auto dump = [](const RDCurve& c, const std::string& path) {
      std::ofstream ds(path);
      ds << "# bitrate psnr\n";
      for (const auto& p : c.points) ds << p.bitrate << ' ' << p.psnr << '\n';
    };
    dump(anchor_y, rd_prefix + ".anchor.dat");
    if (!enhanced.empty()) dump(test_y, rd_prefix + ".test.dat");
  }

  if (!enhanced.empty() && distorted.size() >= 4) {
    BDResult by = bd_metrics(anchor_y, test_y);
    BDResult bc = bd_metrics(anchor_c, test_c);
    std::printf("BD summary (test vs anchor)\n");
    std::printf("  metric   BD-rate %%   BD-PSNR dB%s\n",
                (by.non_monotonic_warning || bc.non_monotonic_warning)
                    ? "   [warning: non-monotone curve]"
                    : "");
    std::printf("  Y        %9.3f   %9.4f\n", by.bd_rate_percent, by.bd_psnr_db);
    std::printf("  YCbCr    %9.3f   %9.4f\n", bc.bd_rate_percent, bc.bd_psnr_db);
    std::ofstream bs(out_csv + ".bd.csv");
    bs << "# pcegan bd summary csv v1\n";
    bs << "metric,bd_rate_percent,bd_psnr_db,overlap_lo,overlap_hi,non_monotonic\n";
    std::snprintf(buf, sizeof(buf), "Y,%.9g,%.9g,%.9g,%.9g,%d\n",
                  by.bd_rate_percent, by.bd_psnr_db, by.overlap_lo, by.overlap_hi,
                  by.non_monotonic_warning ? 1 : 0);
    bs << buf;
    std::snprintf(buf, sizeof(buf), "YCbCr,%.9g,%.9g,%.9g,%.9g,%d\n",
                  bc.bd_rate_percent, bc.bd_psnr_db, bc.overlap_lo, bc.overlap_hi,
                  bc.non_monotonic_warning ? 1 : 0);
    bs << buf;
  }

  if (!scores.empty() && scores[0].has_test) {
    double dsum = 0;
    for (const auto& sp : scores) dsum += sp.test - sp.anchor;
    std::printf("mean external score delta: %.6g\n",
                dsum / static_cast<double>(scores.size()));
  }
  return 0;
}

// ---- bdrate -------------------------------------------------------------

RDCurve load_rd_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("bdrate: cannot open " + path);
  RDCurve curve;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    double r, p;
    if (!(ls >> r >> p)) continue;  // header or stray text
    curve.points.push_back({r, p});
  }
  if (curve.points.size() < 4)
    throw std::runtime_error("bdrate: need >= 4 rate points in " + path);
  return curve;
}

int run_bdrate(const std::string& anchor_path, const std::string& test_path) {
  RDCurve anchor = load_rd_csv(anchor_path);
  RDCurve test = load_rd_csv(test_path);
  BDResult r = bd_metrics(anchor, test);
  std::printf("BD-rate: %.6g%%\nBD-PSNR: %.6g dB\n", r.bd_rate_percent,
              r.bd_psnr_db);
  if (r.non_monotonic_warning)
    std::fprintf(stderr, "warning: non-monotone PSNR along a curve; fit is extrapolative\n");
  return 0;
}

int edit_distance(const std::string& a, const std::string& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1,
                         prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"point cloud attribute quality enhancement pipeline"};
  app.require_subcommand(1);

  static const std::vector<std::string> kCommands = {"distort", "patchify", "train",
                                                    "enhance", "eval", "bdrate"};

  // distort
  std::string d_in, d_out, d_sidecar;
  int d_qp = 40, d_smooth = 8;
  uint64_t d_seed = 0;
  auto* distort_cmd = app.add_subcommand("distort", "apply the synthetic codec proxy");
  distort_cmd->add_option("input", d_in, "input PLY")->required();
  distort_cmd->add_option("-o,--output", d_out, "output PLY")->required();
  distort_cmd->add_option("--qp", d_qp, "quantization parameter (>= 1)");
  distort_cmd->add_option("--smoothing-k", d_smooth, "low-pass neighborhood size, 0 disables");
  distort_cmd->add_option("--seed", d_seed, "recorded in the sidecar");
  distort_cmd->add_option("--sidecar", d_sidecar, "profile record path (default <output>.info)");

  // patchify
  std::string p_in, p_out, p_orig;
  int p_n = 2048, p_ol = 2, p_nei = 6;
  auto* patchify_cmd = app.add_subcommand("patchify", "extract overlapping training patches");
  patchify_cmd->add_option("input", p_in, "distorted PLY")->required();
  patchify_cmd->add_option("-o,--output", p_out, "patch archive path")->required();
  patchify_cmd->add_option("--original", p_orig, "matching original PLY (adds targets)");
  patchify_cmd->add_option("-n,--points", p_n, "points per patch");
  patchify_cmd->add_option("--ol", p_ol, "overlap ratio");
  patchify_cmd->add_option("--num-nei", p_nei, "neighbor patches per group");

  // train
  std::string t_patches, t_config, t_ckpt, t_metrics, t_channel;
  long t_seed = -1;
  std::vector<std::string> t_set;
  auto* train_cmd = app.add_subcommand("train", "train one channel's generator/critic pair");
  train_cmd->add_option("--patches", t_patches, "patch archive with targets")->required();
  train_cmd->add_option("--config", t_config, "key=value config file");
  train_cmd->add_option("--set", t_set, "override config entries (section.key=value)");
  train_cmd->add_option("--ckpt-dir", t_ckpt, "checkpoint directory root")->required();
  train_cmd->add_option("--metrics", t_metrics, "metrics CSV output path");
  train_cmd->add_option("--seed", t_seed, "overrides train.seed");
  train_cmd->add_option("--channel", t_channel, "Y, Cb or Cr (overrides train.channel)");

  // enhance
  std::string e_in, e_ckpt, e_out;
  int e_n = 0, e_ol = 0, e_nei = 0;
  auto* enhance_cmd = app.add_subcommand("enhance", "enhance a cloud with trained checkpoints");
  enhance_cmd->add_option("input", e_in, "input PLY")->required();
  enhance_cmd->add_option("--ckpt", e_ckpt, "checkpoint directory root")->required();
  enhance_cmd->add_option("-o,--output", e_out, "output PLY")->required();
  enhance_cmd->add_option("-n,--points", e_n, "points per patch (default from checkpoint)");
  enhance_cmd->add_option("--ol", e_ol, "overlap ratio (default from checkpoint)");
  enhance_cmd->add_option("--num-nei", e_nei, "neighbor patches per group (default from checkpoint)");

  // eval
  std::string v_orig, v_csv, v_seq = "cloud", v_scores, v_rd;
  std::vector<std::string> v_dist, v_enh;
  std::vector<double> v_rates;
  auto* eval_cmd = app.add_subcommand("eval", "per-rate-point PSNR table and BD summary");
  eval_cmd->add_option("--original", v_orig, "reference PLY")->required();
  eval_cmd->add_option("--distorted", v_dist, "anchor PLYs, one per rate point")->required();
  eval_cmd->add_option("--enhanced", v_enh, "test PLYs, one per rate point");
  eval_cmd->add_option("--bitrates", v_rates, "bits per point, one per rate point")->required();
  eval_cmd->add_option("-o,--output", v_csv, "output CSV")->required();
  eval_cmd->add_option("--sequence", v_seq, "sequence name for the CSV");
  eval_cmd->add_option("--scores", v_scores,
                       "externally computed perceptual scores (anchor [test] per line)");
  eval_cmd->add_option("--rd-data", v_rd, "gnuplot data file prefix");

  // bdrate
  std::string b_anchor, b_test;
  auto* bdrate_cmd = app.add_subcommand("bdrate", "Bjontegaard metrics of two rate curves");
  bdrate_cmd->add_option("anchor", b_anchor, "anchor CSV (bitrate,psnr)")->required();
  bdrate_cmd->add_option("test", b_test, "test CSV (bitrate,psnr)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    // unknown subcommand: suggest the closest one
    if (argc > 1 && argv[1][0] != '-') {
      std::string given = argv[1];
      if (std::find(kCommands.begin(), kCommands.end(), given) == kCommands.end()) {
        std::string best = kCommands[0];
        int bd = edit_distance(given, best);
        for (const auto& c : kCommands) {
          int d = edit_distance(given, c);
          if (d < bd) { bd = d; best = c; }
        }
        std::cerr << "unknown subcommand '" << given << "'; did you mean '"
                  << best << "'?\n";
        return 1;
      }
    }
    app.exit(e);
    return 1;
  }

  try {
    if (distort_cmd->parsed())
      return run_distort(d_in, d_out, d_qp, d_smooth, d_seed, d_sidecar);
    if (patchify_cmd->parsed())
      return run_patchify(p_in, p_out, p_orig, p_n, p_ol, p_nei);
    if (train_cmd->parsed())
      return run_train(t_patches, t_config, t_set, t_ckpt, t_metrics, t_seed,
                       t_channel);
    if (enhance_cmd->parsed())
      return run_enhance(e_in, e_ckpt, e_out, e_n, e_ol, e_nei);
    if (eval_cmd->parsed())
      return run_eval(v_orig, v_dist, v_enh, v_rates, v_csv, v_seq, v_scores, v_rd);
    if (bdrate_cmd->parsed()) return run_bdrate(b_anchor, b_test);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

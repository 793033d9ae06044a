#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "pcegan/config.hpp"
#include "pcegan/patch.hpp"
#include "pcegan/ply_io.hpp"

#include <sys/wait.h>

using namespace pcegan;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path work_dir() {
  fs::path d = fs::temp_directory_path() / "pcegan_cli_test";
  fs::create_directories(d);
  return d;
}

CliResult run_cli(const std::string& args) {
  fs::path d = work_dir();
  fs::path out = d / "stdout.txt", err = d / "stderr.txt";
  std::string cmd = std::string(PCEGAN_CLI_PATH) + " " + args + " >" +
                    out.string() + " 2>" + err.string();
  int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

void write_rd_csv(const fs::path& p, double rate_scale) {
  std::ofstream os(p);
  os << "# bitrate,psnr\n";
  os << 0.5 * rate_scale << ",30\n" << 1.0 * rate_scale << ",32\n"
     << 2.0 * rate_scale << ",34.5\n" << 4.0 * rate_scale << ",36\n";
}

fs::path write_test_cloud(const std::string& name, size_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> g(0, 50);
  std::uniform_int_distribution<int> c(0, 255);
  PointCloud pc;
  pc.color_space = ColorSpace::RGB;
  pc.geometry.resize(n);
  pc.attributes.resize(n);
  for (size_t i = 0; i < n; ++i) {
    pc.geometry[i] = {g(rng), g(rng), g(rng)};
    pc.attributes[i] = {double(c(rng)), double(c(rng)), double(c(rng))};
  }
  fs::path p = work_dir() / name;
  save_ply(pc, p.string());
  return p;
}

double parse_after(const std::string& text, const std::string& label) {
  size_t pos = text.find(label);
  REQUIRE(pos != std::string::npos);
  return std::stod(text.substr(pos + label.size()));
}

}  // namespace

TEST_CASE("config parses sections comments and overrides") {
  ConfigFile cfg = ConfigFile::parse(
      "# leading comment\n"
      "top = 1\n"
      "[train]\n"
      "epochs = 12  # trailing comment\n"
      "lr_generator = 1e-3\n"
      "[patch]\n"
      "k = 20\n");
  CHECK(cfg.get_int("top", 0) == 1);
  CHECK(cfg.get_int("train.epochs", 0) == 12);
  CHECK(cfg.get_double("train.lr_generator", 0) == 1e-3);
  CHECK(cfg.get_int("patch.k", 0) == 20);
  CHECK(cfg.get_int("patch.missing", 7) == 7);
  CHECK_FALSE(cfg.has("patch.missing"));
  cfg.set("patch.k", "32");
  CHECK(cfg.get_int("patch.k", 0) == 32);
}

TEST_CASE("config rejects malformed input with line numbers") {
  CHECK_THROWS_WITH(ConfigFile::parse("a = 1\n[oops\n"),
                    Catch::Matchers::ContainsSubstring(":2"));
  CHECK_THROWS_WITH(ConfigFile::parse("novalue\n"),
                    Catch::Matchers::ContainsSubstring("key=value"));
  CHECK_THROWS_WITH(ConfigFile::parse("= 3\n"),
                    Catch::Matchers::ContainsSubstring("empty key"));
  CHECK_THROWS_AS(ConfigFile::parse_file("/nonexistent/x.cfg"),
                  std::runtime_error);
}

TEST_CASE("config bool parsing") {
  ConfigFile cfg = ConfigFile::parse("a = true\nb = 1\nc = yes\nd = 0\ne = off\n");
  CHECK(cfg.get_bool("a", false));
  CHECK(cfg.get_bool("b", false));
  CHECK(cfg.get_bool("c", false));
  CHECK_FALSE(cfg.get_bool("d", true));
  CHECK_FALSE(cfg.get_bool("e", true));
  CHECK(cfg.get_bool("missing", true));
}

TEST_CASE("cli rejects unknown subcommands with a suggestion") {
  CliResult r = run_cli("bdrte a.csv b.csv");
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("unknown subcommand 'bdrte'") != std::string::npos);
  CHECK(r.err.find("did you mean 'bdrate'") != std::string::npos);
}

TEST_CASE("cli without a subcommand fails with usage") {
  CliResult r = run_cli("");
  CHECK(r.exit_code != 0);
}

TEST_CASE("cli help exits zero") {
  CliResult r = run_cli("--help");
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("distort") != std::string::npos);
  CHECK(r.out.find("bdrate") != std::string::npos);
}

TEST_CASE("bdrate of identical curves reports zero") {
  fs::path a = work_dir() / "anchor.csv";
  write_rd_csv(a, 1.0);
  CliResult r = run_cli("bdrate " + a.string() + " " + a.string());
  REQUIRE(r.exit_code == 0);
  CHECK(std::abs(parse_after(r.out, "BD-rate: ")) < 1e-9);
  CHECK(std::abs(parse_after(r.out, "BD-PSNR: ")) < 1e-9);
}

TEST_CASE("bdrate detects a doubled-rate test curve") {
  fs::path a = work_dir() / "anchor2.csv", b = work_dir() / "test2.csv";
  write_rd_csv(a, 1.0);
  write_rd_csv(b, 2.0);
  CliResult r = run_cli("bdrate " + a.string() + " " + b.string());
  REQUIRE(r.exit_code == 0);
  CHECK(parse_after(r.out, "BD-rate: ") == Catch::Approx(100.0).margin(1e-4));
}

TEST_CASE("bdrate missing file is a runtime error") {
  CliResult r = run_cli("bdrate /nonexistent/a.csv /nonexistent/b.csv");
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("error:") != std::string::npos);
}

TEST_CASE("bdrate needs four rate points") {
  fs::path a = work_dir() / "short.csv";
  std::ofstream(a) << "1,30\n2,31\n3,32\n";
  CliResult r = run_cli("bdrate " + a.string() + " " + a.string());
  CHECK(r.exit_code == 2);
  CHECK(r.err.find(">= 4") != std::string::npos);
}

TEST_CASE("distort writes the output cloud and a profile sidecar") {
  fs::path in = write_test_cloud("d_in.ply", 128, 3);
  fs::path out = work_dir() / "d_out.ply";
  CliResult r = run_cli("distort " + in.string() + " -o " + out.string() +
                        " --qp 40 --smoothing-k 4");
  REQUIRE(r.exit_code == 0);
  REQUIRE(fs::exists(out));
  REQUIRE(fs::exists(out.string() + ".info"));
  std::string info = slurp(out.string() + ".info");
  CHECK(info.find("\"qp\": 40") != std::string::npos);
  CHECK(info.find("bitrate_proxy_bpp") != std::string::npos);
  PointCloud dist = load_ply(out.string());
  CHECK(dist.size() == 128);
}

TEST_CASE("distort rejects a bad qp") {
  fs::path in = write_test_cloud("d_in2.ply", 32, 5);
  fs::path out = work_dir() / "d_out2.ply";
  CliResult r = run_cli("distort " + in.string() + " -o " + out.string() +
                        " --qp 0");
  CHECK(r.exit_code == 2);
}

TEST_CASE("patchify writes an archive that reloads") {
  fs::path orig = write_test_cloud("p_orig.ply", 256, 7);
  fs::path in = write_test_cloud("p_in.ply", 256, 7);
  fs::path out = work_dir() / "patches.bin";
  CliResult r = run_cli("patchify " + in.string() + " -o " + out.string() +
                        " --original " + orig.string() + " -n 64 --ol 2 --num-nei 3");
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("wrote 8 patches of 64 points") != std::string::npos);
  PatchSet set = load_patch_set(out.string());
  CHECK(set.patches.size() == 8);
  CHECK(set.patches[0].size() == 64);
  CHECK(!set.original.empty());
}

TEST_CASE("enhance fails cleanly without checkpoints") {
  fs::path in = write_test_cloud("e_in.ply", 128, 9);
  fs::path out = work_dir() / "e_out.ply";
  fs::path ckpt = work_dir() / "no_ckpts";
  fs::create_directories(ckpt);
  CliResult r = run_cli("enhance " + in.string() + " --ckpt " + ckpt.string() +
                        " -o " + out.string());
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("no generator checkpoints") != std::string::npos);
}

TEST_CASE("train then enhance round trip on a tiny setup") {
  fs::path orig = write_test_cloud("t_orig.ply", 256, 11);
  fs::path dist = work_dir() / "t_dist.ply";
  REQUIRE(run_cli("distort " + orig.string() + " -o " + dist.string() +
                  " --qp 40 --smoothing-k 0").exit_code == 0);
  fs::path patches = work_dir() / "t_patches.bin";
  REQUIRE(run_cli("patchify " + dist.string() + " -o " + patches.string() +
                  " --original " + orig.string() +
                  " -n 64 --ol 2 --num-nei 3").exit_code == 0);

  fs::path ckpt = work_dir() / "ckpts";
  fs::path metrics = work_dir() / "metrics.csv";
  std::string overrides =
      " --set train.epochs=1 --set train.batch_size=4"
      " --set patch.k=6 --set patch.n=64 --set patch.num_nei=3"
      " --set gen.feat=8 --set gen.scfe_lp=4 --set gen.heads=2"
      " --set gen.gsce_h1=4 --set gen.gsce_h2=4"
      " --set gen.fs_hidden=6 --set gen.fs_hidden2=4"
      " --set critic.w1=6 --set critic.w2=8 --set critic.mlp_hidden=6";
  CliResult t = run_cli("train --patches " + patches.string() + " --ckpt-dir " +
                        ckpt.string() + " --metrics " + metrics.string() +
                        " --seed 3 --channel Y" + overrides);
  REQUIRE(t.exit_code == 0);
  CHECK(t.out.find("trained Y channel") != std::string::npos);
  REQUIRE(fs::exists(ckpt / "Y" / "generator.ckpt"));
  REQUIRE(fs::exists(ckpt / "Y" / "critic.ckpt"));
  std::string m = slurp(metrics);
  CHECK(m.rfind("# pcegan metrics csv v1\n", 0) == 0);

  fs::path enhanced = work_dir() / "t_enh.ply";
  CliResult e = run_cli("enhance " + dist.string() + " --ckpt " + ckpt.string() +
                        " -o " + enhanced.string());
  REQUIRE(e.exit_code == 0);
  PointCloud out = load_ply(enhanced.string());
  CHECK(out.size() == 256);
}

TEST_CASE("eval writes the csv table") {
  fs::path orig = write_test_cloud("v_orig.ply", 128, 13);
  std::vector<std::string> rates;
  std::string dist_args, rate_args;
  for (int i = 0; i < 2; ++i) {
    fs::path d = work_dir() / ("v_d" + std::to_string(i) + ".ply");
    int qp = i == 0 ? 46 : 34;
    REQUIRE(run_cli("distort " + orig.string() + " -o " + d.string() +
                    " --qp " + std::to_string(qp)).exit_code == 0);
    dist_args += " --distorted " + d.string();
    rate_args += " --bitrates " + std::to_string(0.5 * (i + 1));
  }
  fs::path csv = work_dir() / "eval.csv";
  CliResult r = run_cli("eval --original " + orig.string() + dist_args +
                        rate_args + " -o " + csv.string() + " --sequence toy");
  REQUIRE(r.exit_code == 0);
  std::string table = slurp(csv);
  CHECK(table.rfind("# pcegan eval csv v1\n", 0) == 0);
  CHECK(table.find("sequence,rate_point,variant,bitrate") != std::string::npos);
  CHECK(table.find("toy,0,anchor,") != std::string::npos);
  CHECK(table.find("toy,1,anchor,") != std::string::npos);
}

TEST_CASE("eval validates argument counts") {
  fs::path orig = write_test_cloud("v2_orig.ply", 64, 17);
  fs::path csv = work_dir() / "eval2.csv";
  CliResult r = run_cli("eval --original " + orig.string() + " --distorted " +
                        orig.string() + " --bitrates 1 --bitrates 2 -o " +
                        csv.string());
  CHECK(r.exit_code == 1);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "histgen/config.hpp"
#include "testutil.hpp"
#include "toy_configs.hpp"

namespace fs = std::filesystem;
namespace tu = histgen::testutil;
using json = nlohmann::json;

namespace {

const char* cli_path() { return HISTGEN_CLI_PATH; }

int run(const std::string& args, std::string* output = nullptr) {
  std::string cmd = std::string(cli_path()) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string text;
  char buf[512];
  while (fgets(buf, sizeof(buf), pipe)) text += buf;
  int status = pclose(pipe);
  if (output) *output = text;
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_toy_config(const fs::path& path, std::uint64_t seed) {
  histgen::RunConfig cfg = tu::toy_run_config(seed);
  cfg.synth.num_wsis = 12;
  cfg.synth.themes = 3;
  cfg.synth.d_in = 12;
  cfg.synth.n_min = 5;
  cfg.synth.n_max = 9;
  cfg.synth.noise_scale = 0.1;
  cfg.data.min_freq = 1;
  cfg.train.epochs = 3;
  cfg.train.learning_rate = 1e-3;
  cfg.finetune.monte_carlo_folds = 2;
  cfg.finetune.epochs = 3;
  cfg.save(path.string());
}

}  // namespace

TEST_CASE("--help exits zero for every command") {
  for (const char* cmd : {"", "synth", "train", "generate", "eval-nlg", "ablate",
                          "finetune-cls", "finetune-surv"}) {
    std::string out;
    int rc = run(std::string(cmd) + (cmd[0] ? " --help" : " --help"), &out);
    INFO("command: ", cmd, "\n", out);
    CHECK(rc == 0);
  }
}

TEST_CASE("missing inputs and bad configs exit nonzero with one-line diagnostics") {
  tu::TempDir dir("cli");
  std::string out;
  CHECK(run("train --manifest /nonexistent/m.json --out " + dir.str(), &out) != 0);
  CHECK(out.find("error:") != std::string::npos);

  fs::path bad = dir.path() / "bad.json";
  std::ofstream(bad) << R"({"trian": {}})";
  CHECK(run("--config " + bad.string() + " synth --out " + dir.str(), &out) != 0);
  CHECK(out.find("unknown key") != std::string::npos);

  CHECK(run("generate --checkpoint /nope.hgck --manifest /nope.json --out x.json", &out) != 0);
  CHECK(out.find("error:") != std::string::npos);
}

TEST_CASE("synth -> train -> generate -> eval-nlg pipeline runs end to end") {
  tu::TempDir dir("cli");
  fs::path cfg = dir.path() / "config.json";
  write_toy_config(cfg, 3);

  std::string out;
  REQUIRE(run("--config " + cfg.string() + " synth --out " + (dir.path() / "data").string(),
              &out) == 0);
  fs::path manifest = dir.path() / "data" / "manifest.json";
  REQUIRE(fs::exists(manifest));

  REQUIRE(run("--config " + cfg.string() + " train --manifest " + manifest.string() +
                  " --out " + (dir.path() / "run").string(),
              &out) == 0);
  REQUIRE(fs::exists(dir.path() / "run" / "checkpoint.hgck"));
  REQUIRE(fs::exists(dir.path() / "run" / "metrics.csv"));
  REQUIRE(fs::exists(dir.path() / "run" / "config.json"));

  // Metric log carries the documented columns.
  std::string csv = slurp(dir.path() / "run" / "metrics.csv");
  CHECK(csv.rfind("epoch,loss,bleu_1,bleu_2,bleu_3,bleu_4,meteor,rouge_l", 0) == 0);

  REQUIRE(run("generate --checkpoint " + (dir.path() / "run" / "checkpoint.hgck").string() +
                  " --manifest " + manifest.string() + " --split test --out " +
                  (dir.path() / "gen.json").string() + " --attention-out " +
                  (dir.path() / "attn.json").string(),
              &out) == 0);
  json gens = json::parse(slurp(dir.path() / "gen.json"));
  REQUIRE(!gens.empty());
  for (const auto& [id, g] : gens.items()) {
    CHECK(g.contains("text"));
    CHECK(g.at("log_prob").get<double>() <= 0.0);
  }
  json attn = json::parse(slurp(dir.path() / "attn.json"));
  CHECK(attn.size() == gens.size());

  REQUIRE(run("eval-nlg --generations " + (dir.path() / "gen.json").string() +
                  " --references " + (dir.path() / "data" / "reports.json").string() +
                  " --out " + (dir.path() / "eval").string(),
              &out) == 0);
  std::string nlg = slurp(dir.path() / "eval" / "nlg_metrics.csv");
  CHECK(nlg.rfind("BLEU-1,BLEU-2,BLEU-3,BLEU-4,METEOR,ROUGE-L", 0) == 0);
  json nlg_json = json::parse(slurp(dir.path() / "eval" / "nlg_metrics.json"));
  for (const char* key : {"BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "METEOR", "ROUGE-L"}) {
    CHECK(nlg_json.contains(key));
    double v = nlg_json.at(key).get<double>();
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("identical config and seed produce byte-identical outputs") {
  tu::TempDir dir("cli");
  fs::path cfg = dir.path() / "config.json";
  write_toy_config(cfg, 11);

  for (const char* tag : {"a", "b"}) {
    fs::path base = dir.path() / tag;
    REQUIRE(run("--config " + cfg.string() + " synth --out " + (base / "data").string()) == 0);
    REQUIRE(run("--config " + cfg.string() + " train --manifest " +
                (base / "data" / "manifest.json").string() + " --out " +
                (base / "run").string()) == 0);
    REQUIRE(run("generate --checkpoint " + (base / "run" / "checkpoint.hgck").string() +
                " --manifest " + (base / "data" / "manifest.json").string() +
                " --split test --out " + (base / "gen.json").string()) == 0);
  }
  CHECK(slurp(dir.path() / "a" / "data" / "manifest.json") ==
        slurp(dir.path() / "b" / "data" / "manifest.json"));
  CHECK(slurp(dir.path() / "a" / "run" / "metrics.csv") ==
        slurp(dir.path() / "b" / "run" / "metrics.csv"));
  CHECK(slurp(dir.path() / "a" / "gen.json") == slurp(dir.path() / "b" / "gen.json"));
}

TEST_CASE("ablate emits the three-arm table with the AVG delta column") {
  tu::TempDir dir("cli");
  fs::path cfg_path = dir.path() / "config.json";
  write_toy_config(cfg_path, 5);

  REQUIRE(run("--config " + cfg_path.string() + " synth --out " +
              (dir.path() / "data").string()) == 0);
  REQUIRE(run("--config " + cfg_path.string() + " ablate --manifest " +
              (dir.path() / "data" / "manifest.json").string() + " --out " +
              (dir.path() / "ablation").string()) == 0);
  std::string csv = slurp(dir.path() / "ablation" / "ablation.csv");
  CHECK(csv.rfind("method,BLEU-1,BLEU-2,BLEU-3,BLEU-4,METEOR,ROUGE-L,AVG_DELTA", 0) == 0);
  CHECK(csv.find("\nBase,") != std::string::npos);
  CHECK(csv.find("\n+CMC,") != std::string::npos);
  CHECK(csv.find("\n+CMC+LGH,") != std::string::npos);
  CHECK(csv.find(",-\n") != std::string::npos);   // Base has no delta
  CHECK(csv.find('%') != std::string::npos);      // the others are percentages
}

TEST_CASE("region sweep runs the documented grid on small bags") {
  tu::TempDir dir("cli");
  fs::path cfg_path = dir.path() / "config.json";
  histgen::RunConfig cfg = tu::toy_run_config(7);
  cfg.synth.num_wsis = 10;
  cfg.synth.themes = 2;
  cfg.synth.d_in = 12;
  cfg.synth.n_min = 4;
  cfg.synth.n_max = 8;
  cfg.data.min_freq = 1;
  cfg.train.epochs = 1;
  cfg.save(cfg_path.string());

  REQUIRE(run("--config " + cfg_path.string() + " synth --out " +
              (dir.path() / "data").string()) == 0);
  REQUIRE(run("--config " + cfg_path.string() + " ablate --region-sweep --manifest " +
              (dir.path() / "data" / "manifest.json").string() + " --out " +
              (dir.path() / "sweep").string()) == 0);
  std::string csv = slurp(dir.path() / "sweep" / "region_sweep.csv");
  for (const char* s : {"\n64,", "\n96,", "\n128,", "\n256,", "\n384,", "\n512,"})
    CHECK(csv.find(s) != std::string::npos);
}

TEST_CASE("finetune commands emit the mean±std tables") {
  tu::TempDir dir("cli");
  fs::path cfg_path = dir.path() / "config.json";
  write_toy_config(cfg_path, 9);

  REQUIRE(run("--config " + cfg_path.string() + " synth --out " +
              (dir.path() / "data").string()) == 0);
  std::string manifest = (dir.path() / "data" / "manifest.json").string();

  REQUIRE(run("--config " + cfg_path.string() + " finetune-cls --scratch --manifest " +
              manifest + " --out " + (dir.path() / "cls").string()) == 0);
  std::string cls = slurp(dir.path() / "cls" / "finetune_cls.csv");
  CHECK(cls.rfind("method,accuracy,auc", 0) == 0);
  CHECK(cls.find("±") != std::string::npos);
  CHECK(fs::exists(dir.path() / "cls" / "finetune_cls_folds.csv"));

  REQUIRE(run("--config " + cfg_path.string() + " finetune-surv --scratch --manifest " +
              manifest + " --out " + (dir.path() / "surv").string()) == 0);
  std::string surv = slurp(dir.path() / "surv" / "finetune_surv.csv");
  CHECK(surv.rfind("method,c_index", 0) == 0);
  CHECK(surv.find("±") != std::string::npos);
}

TEST_CASE("train accepts an arm override and a pretrained checkpoint feeds finetune") {
  tu::TempDir dir("cli");
  fs::path cfg_path = dir.path() / "config.json";
  write_toy_config(cfg_path, 13);

  REQUIRE(run("--config " + cfg_path.string() + " synth --out " +
              (dir.path() / "data").string()) == 0);
  std::string manifest = (dir.path() / "data" / "manifest.json").string();
  REQUIRE(run("--config " + cfg_path.string() + " train --arm base --manifest " + manifest +
              " --out " + (dir.path() / "run").string()) == 0);
  std::string ckpt = (dir.path() / "run" / "checkpoint.hgck").string();

  REQUIRE(run("--config " + cfg_path.string() + " finetune-cls --checkpoint " + ckpt +
              " --manifest " + manifest + " --with-scratch --out " +
              (dir.path() / "cls").string()) == 0);
  std::string cls = slurp(dir.path() / "cls" / "finetune_cls.csv");
  CHECK(cls.find("pretrained,") != std::string::npos);
  CHECK(cls.find("scratch,") != std::string::npos);
}

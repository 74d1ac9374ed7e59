// Copyright 2026 The beamclean Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Command-line surface for the two-stage enhancement pipeline:
//   simulate         generate multichannel mixtures + direct-path targets
//   train-beamformer stage-1 training (SI-SNR)
//   train-enhancer   stage-2 training (residual-gain MSE)
//   enhance          mixture WAV -> enhanced WAV
//   evaluate         metric report over a dataset
//   info             checkpoint config + parameter count
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "beamclean/config.hpp"

namespace {

using namespace beamclean;

struct CommonArgs {
  std::string config_path;
  uint64_t seed = 0;
  bool seed_set = false;
};

io::PipelineConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return io::PipelineConfig{};
  return io::load_pipeline_config(path);
}

int cmd_simulate(const CommonArgs& common, const std::string& out_dir, int64_t count) {
  io::PipelineConfig cfg = load_config_or_default(common.config_path);
  Rng root(common.seed_set ? common.seed : cfg.train.seed);
  for (int64_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "item_%05lld", static_cast<long long>(i));
    const uint64_t item_seed = root.next_u64();
    io::json meta;
    const train::TrainItem item = io::generate_item(cfg.simulate, item_seed, id, &meta);
    io::write_dataset_item(out_dir, item, meta);
  }
  std::cout << "wrote " << count << " mixtures to " << out_dir << "\n";
  return 0;
}

int cmd_train_beamformer(const CommonArgs& common, const std::string& data_dir,
                         const std::string& out_path, std::optional<int64_t> epochs) {
  io::PipelineConfig cfg = load_config_or_default(common.config_path);
  if (common.seed_set) cfg.train.seed = common.seed;
  if (epochs) cfg.train.epochs = *epochs;
  cfg.train.diagnostic_path = out_path + ".diag";
  const train::Dataset ds = io::load_dataset(data_dir);
  bf::Beamformer model = train::train_beamformer(ds, cfg.train, cfg.beamformer, &std::cout);
  io::save_beamformer(model, out_path);
  std::cout << "saved beamformer checkpoint to " << out_path << " ("
            << model.parameter_count() << " parameters)\n";
  return 0;
}

int cmd_train_enhancer(const CommonArgs& common, const std::string& data_dir,
                       const std::string& beamformer_path, const std::string& out_path,
                       std::optional<int64_t> epochs) {
  io::PipelineConfig cfg = load_config_or_default(common.config_path);
  if (common.seed_set) cfg.train.seed = common.seed;
  if (epochs) cfg.train.epochs = *epochs;
  cfg.train.diagnostic_path = out_path + ".diag";
  const train::Dataset ds = io::load_dataset(data_dir);
  const bf::Beamformer bf_model =
      io::beamformer_from_checkpoint(io::load_checkpoint_file(beamformer_path));
  enh::Enhancer model = train::train_enhancer(ds, cfg.train, cfg.enhancer, bf_model, &std::cout);
  io::save_enhancer(model, out_path);
  std::cout << "saved enhancer checkpoint to " << out_path << " ("
            << model.parameter_count() << " parameters)\n";
  return 0;
}

int cmd_enhance(const std::string& in_path, const std::string& out_path,
                const std::string& beamformer_path, const std::string& enhancer_path,
                bool skip_enhancer) {
  const sim::MultichannelWaveform input = io::read_wav(in_path);
  const bf::Beamformer bf_model =
      io::beamformer_from_checkpoint(io::load_checkpoint_file(beamformer_path));
  dsp::Waveform wave = bf_model.beamform(input);
  if (!skip_enhancer) {
    const enh::Enhancer enh_model =
        io::enhancer_from_checkpoint(io::load_checkpoint_file(enhancer_path));
    wave = enh_model.enhance(wave);
  }
  check(wave.length() == input.length(), "enhance: output length ", wave.length(),
        " differs from input length ", input.length());
  io::write_wav(wave, out_path);
  std::cout << "wrote " << out_path << " (" << wave.length() << " samples)\n";
  return 0;
}

int cmd_evaluate(const std::string& data_dir, const std::string& beamformer_path,
                 const std::string& enhancer_path, const std::string& report_path) {
  const train::Dataset ds = io::load_dataset(data_dir);
  std::optional<bf::Beamformer> bf_model;
  std::optional<enh::Enhancer> enh_model;
  if (!beamformer_path.empty())
    bf_model = io::beamformer_from_checkpoint(io::load_checkpoint_file(beamformer_path));
  if (!enhancer_path.empty())
    enh_model = io::enhancer_from_checkpoint(io::load_checkpoint_file(enhancer_path));
  const metrics::MetricReport report = train::evaluate(
      ds, bf_model ? &*bf_model : nullptr, enh_model ? &*enh_model : nullptr);
  const std::string text = report.to_text();
  if (report_path.empty()) {
    std::cout << text;
  } else {
    std::ofstream f(report_path, std::ios::trunc);
    check(f.good(), "evaluate: cannot write report to '", report_path, "'");
    f << text;
    std::cout << "wrote metric report to " << report_path << "\n";
  }
  return 0;
}

int cmd_info(const std::string& ckpt_path) {
  const io::Checkpoint ckpt = io::load_checkpoint_file(ckpt_path);
  std::cout << "kind: " << io::checkpoint_kind(ckpt) << "\n";
  std::cout << "parameters: " << ckpt.parameter_count() << "\n";
  std::cout << "tensors: " << ckpt.tensors.size() << "\n";
  std::cout << "config: " << io::json::parse(ckpt.config_json).dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"beamclean: neural beamforming + log-spectral residual enhancement"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string out_dir, data_dir, out_path, in_path, wav_out;
  std::string beamformer_path, enhancer_path, report_path, ckpt_path;
  int64_t count = 10;
  std::optional<int64_t> epochs;
  bool skip_enhancer = false;

  auto add_common = [&](CLI::App* cmd, bool with_seed = true) {
    cmd->add_option("--config", common.config_path, "pipeline config JSON");
    if (with_seed)
      cmd->add_option("--seed", common.seed, "master seed (overrides config)")
          ->each([&](const std::string&) { common.seed_set = true; });
  };

  CLI::App* sim_cmd = app.add_subcommand("simulate", "generate simulated mixtures");
  add_common(sim_cmd);
  sim_cmd->add_option("--out", out_dir, "output dataset directory")->required();
  sim_cmd->add_option("--count", count, "number of mixtures");

  CLI::App* tb_cmd = app.add_subcommand("train-beamformer", "train stage 1 on SI-SNR");
  add_common(tb_cmd);
  tb_cmd->add_option("--data", data_dir, "dataset directory")->required();
  tb_cmd->add_option("--out", out_path, "output checkpoint path")->required();
  tb_cmd->add_option("--epochs", [&epochs](const std::vector<std::string>& v) {
    epochs = std::stoll(v[0]);
    return true;
  }, "override epochs");

  CLI::App* te_cmd = app.add_subcommand("train-enhancer", "train stage 2 on residual MSE");
  add_common(te_cmd);
  te_cmd->add_option("--data", data_dir, "dataset directory")->required();
  te_cmd->add_option("--beamformer", beamformer_path, "stage-1 checkpoint")->required();
  te_cmd->add_option("--out", out_path, "output checkpoint path")->required();
  te_cmd->add_option("--epochs", [&epochs](const std::vector<std::string>& v) {
    epochs = std::stoll(v[0]);
    return true;
  }, "override epochs");

  CLI::App* en_cmd = app.add_subcommand("enhance", "enhance a mixture WAV");
  en_cmd->add_option("input", in_path, "input multichannel WAV")->required();
  en_cmd->add_option("output", wav_out, "output WAV")->required();
  en_cmd->add_option("--beamformer", beamformer_path, "stage-1 checkpoint")->required();
  en_cmd->add_option("--enhancer", enhancer_path, "stage-2 checkpoint");
  en_cmd->add_flag("--skip-enhancer", skip_enhancer, "run the beamformer only");

  CLI::App* ev_cmd = app.add_subcommand("evaluate", "write a metric report for a dataset");
  ev_cmd->add_option("--data", data_dir, "dataset directory")->required();
  ev_cmd->add_option("--beamformer", beamformer_path, "stage-1 checkpoint");
  ev_cmd->add_option("--enhancer", enhancer_path, "stage-2 checkpoint");
  ev_cmd->add_option("--report", report_path, "report output path (default: stdout)");

  CLI::App* info_cmd = app.add_subcommand("info", "print checkpoint config + parameter count");
  info_cmd->add_option("checkpoint", ckpt_path, "checkpoint path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (sim_cmd->parsed()) return cmd_simulate(common, out_dir, count);
    if (tb_cmd->parsed()) return cmd_train_beamformer(common, data_dir, out_path, epochs);
    if (te_cmd->parsed())
      return cmd_train_enhancer(common, data_dir, beamformer_path, out_path, epochs);
    if (en_cmd->parsed()) {
      if (!skip_enhancer && enhancer_path.empty()) {
        std::cerr << "enhance: pass --enhancer <ckpt> or --skip-enhancer\n";
        return 1;
      }
      return cmd_enhance(in_path, wav_out, beamformer_path, enhancer_path, skip_enhancer);
    }
    if (ev_cmd->parsed())
      return cmd_evaluate(data_dir, beamformer_path, enhancer_path, report_path);
    if (info_cmd->parsed()) return cmd_info(ckpt_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

// Command-line front end: simulate, train-ngcc, train, eval,
// localize-classical and plot.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "maeloc/error.hpp"
#include "maeloc/ngcc/ngcc.hpp"
#include "maeloc/pipeline/config.hpp"
#include "maeloc/pipeline/dataset.hpp"
#include "maeloc/pipeline/evaluate.hpp"
#include "maeloc/pipeline/manifest.hpp"
#include "maeloc/pipeline/plots.hpp"
#include "maeloc/pipeline/train.hpp"
#include "maeloc/room/scene_io.hpp"

using namespace maeloc;
using namespace maeloc::pipeline;
namespace fs = std::filesystem;

namespace {

void log_line(const std::string& s) { std::cerr << s << std::endl; }

KeyValues settings(const std::string& config_file, const std::vector<std::string>& overrides) {
  KeyValues kv;
  if (!config_file.empty()) kv = KeyValues::load(config_file);
  for (const auto& o : overrides) kv.set_assignment(o);
  return kv;
}

void warn_unused(const KeyValues& kv) {
  for (const auto& k : kv.unused()) log_line("warning: unused config key '" + k + "'");
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
}

void write_frames_csv(const fs::path& p, const EvalReport& r) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << "id,true_x,true_y,true_z,est_x,est_y,est_z,error_m,converged,snr_db,t60,M,snr_in,snr_out\n";
  out.precision(9);
  for (const auto& f : r.frames)
    out << f.id << ',' << f.truth.x() << ',' << f.truth.y() << ',' << f.truth.z() << ',' << f.estimate.x() << ','
        << f.estimate.y() << ',' << f.estimate.z() << ',' << f.error << ',' << (f.converged ? 1 : 0) << ','
        << f.snr_db << ',' << f.t60 << ',' << f.M << ',' << f.snr_in << ',' << f.snr_out << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"maeloc: simulated sound-source localisation toolkit"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a simulated dataset");
  std::string sim_config, sim_out;
  std::vector<std::string> sim_set;
  sim->add_option("--config", sim_config, "key=value file (kind, count, seed, length, t60_min, ...)");
  sim->add_option("--set", sim_set, "key=value override")->take_all();
  sim->add_option("--out", sim_out, "output directory")->required();

  // train-ngcc
  auto* tng = app.add_subcommand("train-ngcc", "Pretrain the learned TDOA front end");
  std::string ng_data, ng_out = "ngcc_run";
  int ng_tau = 0;
  ngcc::NgccConfig ng_cfg;
  ngcc::PretrainConfig ng_opt;
  std::size_t ng_frame = 512;
  tng->add_option("--data", ng_data, "dataset directory")->required();
  tng->add_option("--tau", ng_tau, "largest delay class in samples")->required();
  tng->add_option("--out", ng_out, "run directory");
  tng->add_option("--epochs", ng_opt.epochs);
  tng->add_option("--lr", ng_opt.lr);
  tng->add_option("--batch", ng_opt.batch);
  tng->add_option("--pairs", ng_opt.pairs_per_scene, "pairs per scene and epoch");
  tng->add_option("--frame-len", ng_frame, "crop length, 0 for whole signals");
  tng->add_option("--seed", ng_opt.seed);
  tng->add_option("--channels", ng_cfg.channels);
  tng->add_option("--filter-len", ng_cfg.filter_len);

  // train
  auto* trn = app.add_subcommand("train", "Train the localisation model");
  std::string tr_config, tr_data, tr_ngcc, tr_out;
  std::vector<std::string> tr_set;
  trn->add_option("--config", tr_config, "key=value file (preset, epochs, lr, ...)");
  trn->add_option("--set", tr_set, "key=value override")->take_all();
  trn->add_option("--data", tr_data, "dataset directory (overrides 'dataset')");
  trn->add_option("--ngcc", tr_ngcc, "NGCC checkpoint (overrides 'ngcc_checkpoint')");
  trn->add_option("--out", tr_out, "run directory (overrides 'run_dir')");

  // eval
  auto* evl = app.add_subcommand("eval", "Evaluate a predictor on a dataset");
  std::string ev_model, ev_data, ev_ngcc, ev_out = "eval_run", ev_predictor = "model", ev_setup = "1a";
  EvalOptions ev_opt;
  evl->add_option("--model", ev_model, "model checkpoint");
  evl->add_option("--data", ev_data, "dataset directory")->required();
  evl->add_option("--ngcc", ev_ngcc, "NGCC checkpoint for TDOA features");
  evl->add_option("--predictor", ev_predictor, "model, center, oracle, gcc_ransac or gcc_ls");
  evl->add_option("--setup", ev_setup, "1a, 1b, 2a or 2b");
  evl->add_option("--m-known", ev_opt.m_known, "known microphones (0: all)");
  evl->add_option("--seed", ev_opt.seed);
  evl->add_option("--bootstrap", ev_opt.bootstrap);
  evl->add_option("--N", ev_opt.N, "frame length for non-model predictors");
  evl->add_option("--out", ev_out, "run directory");

  // localize-classical
  auto* loc = app.add_subcommand("localize-classical", "GCC-PHAT plus multilateration per scene");
  std::string lc_scene, lc_method = "ransac", lc_out;
  int lc_peaks = 4;
  int lc_frame = 0;
  std::uint64_t lc_seed = 0;
  loc->add_option("--scene", lc_scene, "dataset directory")->required();
  loc->add_option("--peaks", lc_peaks, "candidate peaks per pair");
  loc->add_option("--method", lc_method, "ls or ransac")->check(CLI::IsMember({"ls", "ransac"}));
  loc->add_option("--frame-len", lc_frame, "centred window length, 0 for whole signals");
  loc->add_option("--seed", lc_seed);
  loc->add_option("--out", lc_out, "CSV file (default: stdout)");

  // plot
  auto* plt = app.add_subcommand("plot", "Curves and CDFs from evaluation reports");
  std::vector<std::string> pl_reports;
  std::string pl_out = "plots";
  plt->add_option("--report", pl_reports, "label=report.json")->required()->take_all();
  plt->add_option("--out", pl_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      KeyValues kv = settings(sim_config, sim_set);
      const DatasetSpec spec = dataset_spec_from(kv);
      warn_unused(kv);
      build_dataset(spec, sim_out, [&](int k) {
        if (k % 100 == 0 || k == spec.count) log_line("simulated " + std::to_string(k) + "/" + std::to_string(spec.count));
      });
      Manifest m;
      m.command = "simulate";
      KeyValues echo;
      write_dataset_spec(echo, spec);
      m.config = echo.values();
      m.seeds = {{"dataset", spec.seed}};
      m.artifacts = {"index.txt", "dataset.cfg"};
      m.inputs = {{"dataset_fingerprint", dataset_fingerprint(sim_out)}};
      write_manifest(sim_out, m);
      return 0;
    }

    if (tng->parsed()) {
      const auto scenes = room::read_dataset(ng_data);
      ng_cfg.tau = ng_tau;
      ng_opt.frame_len = ng_frame;
      ng_opt.log = log_line;
      ngcc::PretrainReport report;
      auto net = ngcc::pretrain_ngcc(scenes, ng_cfg, ng_opt, &report);
      fs::create_directories(ng_out);
      ngcc::save_ngcc((fs::path(ng_out) / "ngcc.bin").string(), net);
      std::ofstream csv(fs::path(ng_out) / "ngcc_losses.csv");
      csv << "epoch,train_loss,val_accuracy\n";
      for (std::size_t e = 0; e < report.train_loss.size(); ++e)
        csv << e + 1 << ',' << report.train_loss[e] << ',' << report.val_accuracy[e] << '\n';
      csv.close();
      Manifest m;
      m.command = "train-ngcc";
      m.config = {{"tau", std::to_string(ng_cfg.tau)},
                  {"channels", std::to_string(ng_cfg.channels)},
                  {"filter_len", std::to_string(ng_cfg.filter_len)},
                  {"epochs", std::to_string(ng_opt.epochs)},
                  {"lr", std::to_string(ng_opt.lr)},
                  {"batch", std::to_string(ng_opt.batch)},
                  {"pairs_per_scene", std::to_string(ng_opt.pairs_per_scene)},
                  {"frame_len", std::to_string(ng_opt.frame_len)},
                  {"best_epoch", std::to_string(report.best_epoch)},
                  {"best_val_accuracy", std::to_string(report.best_val_accuracy)}};
      m.seeds = {{"pretrain", ng_opt.seed}};
      m.inputs = {{"dataset_fingerprint", dataset_fingerprint(ng_data)}};
      m.artifacts = {"ngcc.bin", "ngcc_losses.csv"};
      write_manifest(ng_out, m);
      return 0;
    }

    if (trn->parsed()) {
      KeyValues kv = settings(tr_config, tr_set);
      if (!tr_data.empty()) kv.set("dataset", tr_data);
      if (!tr_ngcc.empty()) kv.set("ngcc_checkpoint", tr_ngcc);
      if (!tr_out.empty()) kv.set("run_dir", tr_out);
      TrainConfig cfg = train_config_from(kv);
      warn_unused(kv);
      if (cfg.dataset.empty()) throw InvalidArgument("train: no dataset given (--data or dataset=)");
      const auto scenes = room::read_dataset(cfg.dataset);
      std::unique_ptr<ngcc::NgccModel<float>> net;
      if (cfg.model.use_tdoa) {
        if (cfg.ngcc_checkpoint.empty()) throw InvalidArgument("train: TDOA features need an NGCC checkpoint");
        net = std::make_unique<ngcc::NgccModel<float>>(ngcc::load_ngcc(cfg.ngcc_checkpoint));
      }
      TrainHooks hooks;
      hooks.log = log_line;
      const auto result = train(cfg, scenes, net.get(), hooks);
      Manifest m;
      m.command = "train";
      m.config = to_key_values(cfg).values();
      m.config["best_epoch"] = std::to_string(result.best_epoch);
      m.seeds = {{"train", cfg.seed}};
      m.inputs = {{"dataset_fingerprint", dataset_fingerprint(cfg.dataset)}};
      if (net) m.inputs["ngcc_checkpoint"] = sha256_file(cfg.ngcc_checkpoint);
      m.artifacts = {"best.bin", "losses.csv", "state.bin", "state.meta"};
      write_manifest(cfg.run_dir, m);
      return 0;
    }

    if (evl->parsed()) {
      const auto scenes = room::read_dataset(ev_data);
      ev_opt.setup = model::parse_setup(ev_setup);
      std::unique_ptr<ngcc::NgccModel<float>> net;
      if (!ev_ngcc.empty()) net = std::make_unique<ngcc::NgccModel<float>>(ngcc::load_ngcc(ev_ngcc));
      ev_opt.ngcc = net.get();
      std::unique_ptr<model::Model<float>> trained;
      std::unique_ptr<Predictor> predictor;
      if (ev_predictor == "model") {
        if (ev_model.empty()) throw InvalidArgument("eval: --model is required for the model predictor");
        trained = std::make_unique<model::Model<float>>(model::load_model(ev_model));
        ev_opt.N = trained->config.N;
        if (trained->config.use_tdoa && (!net || net->config.tau != trained->config.tau))
          throw InvalidArgument("eval: the model needs an NGCC checkpoint with tau " + std::to_string(trained->config.tau));
        predictor = std::make_unique<ModelPredictor>(*trained);
      } else if (ev_predictor == "center") {
        predictor = std::make_unique<CenterPredictor>();
      } else if (ev_predictor == "oracle") {
        predictor = std::make_unique<OraclePredictor>();
      } else if (ev_predictor == "gcc_ransac" || ev_predictor == "gcc_ls") {
        ClassicalConfig cc;
        cc.ransac = ev_predictor == "gcc_ransac";
        cc.seed = ev_opt.seed;
        predictor = std::make_unique<ClassicalPredictor>(cc);
      } else {
        throw InvalidArgument("eval: unknown predictor '" + ev_predictor + "'");
      }
      const auto report = evaluate(*predictor, scenes, ev_opt);
      fs::create_directories(ev_out);
      write_text(fs::path(ev_out) / "report.json", report.to_json());
      write_frames_csv(fs::path(ev_out) / "frames.csv", report);
      std::printf("%s setup %s: MAE %.2f cm [%.2f, %.2f], acc@30cm %.3f [%.3f, %.3f], non-converged %d/%zu\n",
                  report.predictor.c_str(), ev_setup.c_str(), report.mae_cm.value, report.mae_cm.lo, report.mae_cm.hi,
                  report.acc.value, report.acc.lo, report.acc.hi, report.non_converged, report.frames.size());
      if (report.mic_count > 0) std::printf("microphone MAE %.2f cm over %d coordinates\n", report.mic_mae_cm, report.mic_count);
      Manifest m;
      m.command = "eval";
      m.config = {{"predictor", ev_predictor}, {"setup", ev_setup}, {"m_known", std::to_string(ev_opt.m_known)},
                  {"N", std::to_string(ev_opt.N)}, {"bootstrap", std::to_string(ev_opt.bootstrap)}};
      m.seeds = {{"eval", ev_opt.seed}};
      m.inputs = {{"dataset_fingerprint", dataset_fingerprint(ev_data)}};
      if (!ev_model.empty()) m.inputs["model_checkpoint"] = sha256_file(ev_model);
      if (!ev_ngcc.empty()) m.inputs["ngcc_checkpoint"] = sha256_file(ev_ngcc);
      m.artifacts = {"report.json", "frames.csv"};
      write_manifest(ev_out, m);
      return 0;
    }

    if (loc->parsed()) {
      const auto scenes = room::read_dataset(lc_scene);
      ClassicalConfig cc;
      cc.peaks = lc_peaks;
      cc.ransac = lc_method == "ransac";
      cc.seed = lc_seed;
      ClassicalPredictor solver(cc);
      std::ofstream file;
      if (!lc_out.empty()) {
        file.open(lc_out);
        if (!file) throw IoError("cannot write " + lc_out);
      }
      std::ostream& out = lc_out.empty() ? std::cout : file;
      out << "frame,x,y,z,residual,inliers,converged\n";
      out.precision(9);
      for (const auto& s : scenes) {
        const int n = lc_frame > 0 ? lc_frame : static_cast<int>(s.length());
        const std::size_t off = window_offset(s.length(), n, 0);
        std::vector<signal::AudioFrame> frames;
        for (const auto& f : s.received)
          frames.emplace_back(std::vector<double>(f.samples.begin() + static_cast<long>(off),
                                                  f.samples.begin() + static_cast<long>(off) + n),
                              f.sample_rate);
        const auto r = solver.localize(s.mic_pos, frames, s.room.max_delay_samples());
        out << s.id << ',' << r.position.x() << ',' << r.position.y() << ',' << r.position.z() << ','
            << r.residual_rms << ',' << r.inliers << ',' << (r.converged ? 1 : 0) << '\n';
      }
      return 0;
    }

    if (plt->parsed()) {
      std::vector<EvalReport> reports;
      std::vector<std::string> labels;
      for (const auto& spec : pl_reports) {
        const auto eq = spec.find('=');
        const std::string label = eq == std::string::npos ? fs::path(spec).parent_path().filename().string() : spec.substr(0, eq);
        const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
        reports.push_back(report_from_json(read_text(path)));
        labels.push_back(label.empty() ? path : label);
      }
      std::vector<std::pair<std::string, const EvalReport*>> series;
      for (std::size_t k = 0; k < reports.size(); ++k) series.emplace_back(labels[k], &reports[k]);
      const auto files = emit_plots(series, pl_out);
      Manifest m;
      m.command = "plot";
      for (std::size_t k = 0; k < reports.size(); ++k) m.inputs[labels[k]] = sha256_hex(reports[k].to_json());
      for (const auto& f : files) m.artifacts.push_back(f.filename().string());
      write_manifest(pl_out, m);
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}

// petroseg command-line tool.

#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "petroseg/commands.hpp"
#include "petroseg/service.hpp"

namespace fs = std::filesystem;
using namespace petroseg;

namespace {

service::AnnotationService* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

struct Common {
  std::string config_path;
  std::optional<double> pitch;

  ToolConfig load() const {
    ToolConfig cfg = config_path.empty() ? ToolConfig{} : load_config(config_path);
    if (pitch) {
      cfg.pitch_um = *pitch;
      cfg.validate();
    }
    return cfg;
  }
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config_path, "key = value config file")->check(CLI::ExistingFile);
  sub->add_option("--pitch", c.pitch, "pixel pitch in um (overrides config)");
}

int run(int argc, char** argv) {
  CLI::App app{"Concrete section phase segmentation and air-void analysis"};
  app.require_subcommand(1);
  Common common;

  auto* ingest = app.add_subcommand("ingest", "validate a scan and optional mask");
  std::string ingest_scan, ingest_mask;
  bool ingest_palette = false;
  ingest->add_option("scan", ingest_scan)->required();
  ingest->add_option("--mask", ingest_mask, "co-registered mask");
  ingest->add_flag("--palette", ingest_palette, "mask is a palette render");
  add_common(ingest, common);

  auto* colorseg = app.add_subcommand("color-seg", "segment a treated scan by colour rules");
  std::string cs_scan, cs_out;
  bool cs_no_render = false;
  colorseg->add_option("scan", cs_scan)->required();
  colorseg->add_option("-o,--output", cs_out, "indexed mask PNG")->required();
  colorseg->add_flag("--no-render", cs_no_render, "skip the palette render");
  add_common(colorseg, common);

  auto* train = app.add_subcommand("train", "train the segmentation net on <id>.png / <id>.mask.png pairs");
  std::string tr_data, tr_out;
  train->add_option("dataset", tr_data)->required();
  train->add_option("-o,--output", tr_out, "checkpoint path")->required();
  add_common(train, common);

  auto* predict = app.add_subcommand("predict", "segment a scan with a trained checkpoint");
  std::string pr_ckpt, pr_scan, pr_out;
  bool pr_no_render = false;
  predict->add_option("checkpoint", pr_ckpt)->required();
  predict->add_option("scan", pr_scan)->required();
  predict->add_option("-o,--output", pr_out, "indexed mask PNG")->required();
  predict->add_flag("--no-render", pr_no_render, "skip the palette render");
  add_common(predict, common);

  auto* c457 = app.add_subcommand("c457", "point count and linear traverse parameters");
  std::string av_mask, av_out, av_label;
  c457->add_option("mask", av_mask)->required();
  c457->add_option("-o,--output", av_out, "report CSV");
  c457->add_option("--label", av_label, "row label (default: mask file stem)");
  add_common(c457, common);

  auto* evaluate = app.add_subcommand("evaluate", "confusion matrix and IoU against a point annotation");
  std::string ev_truth, ev_mask;
  evaluate->add_option("annotation", ev_truth)->required();
  evaluate->add_option("mask", ev_mask)->required();
  add_common(evaluate, common);

  auto* serve = app.add_subcommand("serve", "annotation service for one scan");
  std::string sv_scan, sv_ann, sv_static, sv_host = "127.0.0.1";
  std::optional<int> sv_port;
  serve->add_option("scan", sv_scan)->required();
  serve->add_option("annotation", sv_ann)->required();
  serve->add_option("-p,--port", sv_port, "port (overrides serve.port; 0 picks one)");
  serve->add_option("--host", sv_host, "bind address");
  serve->add_option("--static", sv_static, "directory served under /");
  add_common(serve, common);

  auto* report = app.add_subcommand("report", "comparison table from report CSVs");
  std::vector<std::string> rp_csvs;
  report->add_option("csv", rp_csvs)->required();

  auto* phantom = app.add_subcommand("phantom", "write a synthetic scan with known phases");
  std::string ph_out, ph_style = "treated";
  PhantomSpec ph;
  bool ph_no_specks = false;
  phantom->add_option("-o,--output", ph_out, "output directory")->required();
  phantom->add_option("--width", ph.width);
  phantom->add_option("--height", ph.height);
  phantom->add_option("--seed", ph.seed);
  phantom->add_option("--id", ph.id);
  phantom->add_option("--air", ph.air_fraction);
  phantom->add_option("--paste", ph.paste_fraction);
  phantom->add_option("--style", ph_style)->check(CLI::IsMember({"treated", "raw"}));
  phantom->add_flag("--no-specks", ph_no_specks);
  add_common(phantom, common);

  auto* config = app.add_subcommand("config", "configuration helpers");
  config->require_subcommand(1);
  auto* config_init = config->add_subcommand("init", "print or write all defaults");
  std::string ci_out;
  config_init->add_option("-o,--output", ci_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << error_tag(ErrorKind::Config) << ": " << e.what() << "\n";
    return static_cast<int>(ErrorKind::Config);
  }

  if (*ingest) {
    const auto s = cmd::cmd_ingest(ingest_scan, ingest_mask.empty() ? std::nullopt : std::optional<fs::path>(ingest_mask),
                                   common.load(), ingest_palette);
    std::cout << cmd::format_summary(s);
  } else if (*colorseg) {
    cmd::cmd_color_seg(cs_scan, cs_out, common.load(), !cs_no_render);
  } else if (*train) {
    cmd::cmd_train(tr_data, tr_out, common.load(), &std::cerr);
  } else if (*predict) {
    cmd::cmd_predict(pr_ckpt, pr_scan, pr_out, common.load(), &std::cerr, !pr_no_render);
  } else if (*c457) {
    const auto r = cmd::cmd_c457(av_mask, av_out.empty() ? std::nullopt : std::optional<fs::path>(av_out),
                                 common.load(), av_label);
    std::cout << c457::report_table({r});
  } else if (*evaluate) {
    std::cout << eval::format_accuracy(cmd::cmd_evaluate(ev_truth, ev_mask, common.load()));
  } else if (*serve) {
    const ToolConfig cfg = common.load();
    service::AnnotationService svc(load_scan(sv_scan, cfg.pitch_um), sv_ann, cfg.grid_rows, cfg.grid_cols);
    if (!sv_static.empty()) svc.mount_static(sv_static);
    const int port = svc.bind(sv_host, sv_port.value_or(cfg.serve_port));
    std::cerr << "serving " << sv_scan << " on http://" << sv_host << ":" << port << "/api\n";
    g_service = &svc;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    svc.listen();
    g_service = nullptr;
  } else if (*report) {
    std::vector<fs::path> paths(rp_csvs.begin(), rp_csvs.end());
    std::cout << cmd::cmd_report(paths);
  } else if (*phantom) {
    const ToolConfig cfg = common.load();
    ph.pitch_um = cfg.pitch_um;
    ph.style = ph_style == "raw" ? PhantomStyle::Raw : PhantomStyle::Treated;
    ph.plant_specks = !ph_no_specks;
    const auto f = cmd::cmd_phantom(ph_out, ph);
    std::cout << f.scan.string() << "\n" << f.mask.string() << "\n";
  } else if (*config_init) {
    const std::string text = config_text(ToolConfig{});
    if (ci_out.empty()) {
      std::cout << text;
    } else {
      cmd::write_text(ci_out, text);
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << error_tag(e.kind()) << ": " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << error_tag(ErrorKind::Internal) << ": " << e.what() << "\n";
    return static_cast<int>(ErrorKind::Internal);
  }
}

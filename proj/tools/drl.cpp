#include <CLI11.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "drl/experiments.hpp"

namespace fs = std::filesystem;
using drl::exp::Json;

namespace {

enum Exit { kOk = 0, kIo = 1, kValidation = 2, kNumerical = 3 };

int exit_for(drl::ErrorCode code) {
  switch (code) {
    case drl::ErrorCode::kInvalidArgument:
    case drl::ErrorCode::kUnsupportedOperation:
    case drl::ErrorCode::kResourceLimit:
      return kValidation;
    case drl::ErrorCode::kFitInfeasible:
    case drl::ErrorCode::kTrainingDiverged:
      return kNumerical;
    case drl::ErrorCode::kIo:
      return kIo;
  }
  return kIo;
}

int report(const char* code, int status, const std::string& message) {
  std::string flat = message;
  for (char& c : flat) {
    if (c == '\n' || c == '\r') c = ' ';
    if (c == '"') c = '\'';
  }
  std::cerr << "drl-error code=" << code << " exit=" << status << " message=\"" << flat << "\"\n";
  return status;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw drl::IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (!in.good() && !in.eof()) throw drl::IoError("cannot read " + path.string());
  return buf.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw drl::IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw drl::IoError("write failed for " + path.string());
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw drl::IoError("sha256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int run(const std::string& config_path) {
  const std::string started = utc_now();
  const auto wall_start = std::chrono::steady_clock::now();
  const auto cfg = drl::exp::parse_config(read_file(config_path));
  fs::path out_dir = cfg.output_dir;
  if (const char* env = std::getenv("DRL_OUTPUT_DIR"); env && *env) out_dir = env;

  const auto plan = drl::exp::plan_experiment(cfg);
  drl::exp::Outputs outputs = drl::exp::execute(plan);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw drl::IoError("cannot create " + out_dir.string() + ": " + ec.message());

  Json files = Json::array();
  auto emit = [&](const std::string& name, const std::string& bytes) {
    write_file(out_dir / name, bytes);
    files.push_back({{"name", name}, {"bytes", bytes.size()}, {"sha256", sha256_hex(bytes)}});
  };
  for (const auto& t : outputs.tables) emit(t.name + ".csv", t.render());
  for (const auto& [name, bytes] : outputs.binaries) emit(name, bytes);
  const Json summary = {{"experiment", cfg.experiment},
                        {"schema_version", drl::exp::kSchemaVersion},
                        {"results", outputs.summary},
                        {"wall_time_seconds", wall}};
  emit("summary.json", summary.dump(2) + "\n");

  const Json manifest = {{"artifact", "drl"},
                         {"version", DRL_VERSION},
                         {"schema_version", drl::exp::kSchemaVersion},
                         {"config", cfg.raw},
                         {"output_dir", out_dir.string()},
                         {"started_at", started},
                         {"finished_at", utc_now()},
                         {"files", files}};
  const fs::path tmp = out_dir / "manifest.json.tmp";
  write_file(tmp, manifest.dump(2) + "\n");
  fs::rename(tmp, out_dir / "manifest.json", ec);
  if (ec) throw drl::IoError("cannot finalize manifest: " + ec.message());
  std::cout << (out_dir / "manifest.json").string() << "\n";
  return kOk;
}

int plot(const std::string& csv_path, const std::string& kind, const std::string& out_path) {
  const drl::exp::CsvTable data = drl::exp::plot_data(drl::exp::parse_csv(read_file(csv_path)), kind);
  const fs::path out = out_path.empty() ? fs::path(csv_path).parent_path() / (data.name + ".csv") : fs::path(out_path);
  write_file(out, data.render());
  std::cout << out.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random deep network laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run_cmd = app.add_subcommand("run", "Run the experiment described by a JSON config");
  run_cmd->add_option("config", config_path, "Config file")->required();

  std::string csv_path, kind, out_path;
  auto* plot_cmd = app.add_subcommand("plot", "Derive plot-ready CSV from a results CSV");
  plot_cmd->add_option("results", csv_path, "Results CSV")->required();
  plot_cmd->add_option("--kind", kind, "Plot kind")->required()->check(CLI::IsMember(drl::exp::plot_kinds()));
  plot_cmd->add_option("--out", out_path, "Output path (default: next to the results)");

  app.add_subcommand("version", "Print the version");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("usage", kValidation, e.what());
  }

  try {
    if (run_cmd->parsed()) return run(config_path);
    if (plot_cmd->parsed()) return plot(csv_path, kind, out_path);
    std::cout << "drl " << DRL_VERSION << " (schema " << drl::exp::kSchemaVersion << ")\n";
    return kOk;
  } catch (const drl::Error& e) {
    return report(drl::error_code_name(e.code()), exit_for(e.code()), e.what());
  } catch (const fs::filesystem_error& e) {
    return report("io_error", kIo, e.what());
  } catch (const std::bad_alloc&) {
    return report("resource_limit", kValidation, "out of memory");
  } catch (const std::exception& e) {
    return report("internal", kIo, e.what());
  }
}

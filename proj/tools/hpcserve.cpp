// Copyright 2026 The hpcserve Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// hpcserve: operator entrypoint.
//
//   hpcserve run proxy|interface|scheduler|sim|all --config deploy.json
//   hpcserve bench-latency --config deploy.json [--samples 50]
//   hpcserve bench-throughput --config deploy.json [--stage all] [--duration 30]
//   hpcserve scenario file.scn
//   hpcserve check-config --config deploy.json
//
// Exit codes: 0 success, 1 invalid configuration or arguments, 2 runtime
// failure, 3 threshold breach.

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <thread>

#include "hpcserve/bench.hpp"
#include "hpcserve/channel.hpp"
#include "hpcserve/config.hpp"
#include "hpcserve/files.hpp"
#include "hpcserve/interface.hpp"
#include "hpcserve/local_stack.hpp"
#include "hpcserve/log.hpp"
#include "hpcserve/proxy.hpp"
#include "hpcserve/scenario.hpp"
#include "hpcserve/scheduler.hpp"
#include "hpcserve/workload.hpp"

namespace {

using namespace hpcserve;

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitThreshold = 3;

struct Failure {
  int code;
  std::string message;
};

config::DeploymentConfig load(const std::string& path) {
  try {
    return config::load_config(path);
  } catch (const config::ConfigError& e) {
    std::string msg = path + ": invalid configuration";
    for (const auto& d : e.diagnostics()) msg += "\n  " + d;
    throw Failure{kExitInvalid, msg};
  }
}

std::string config_text_hash(const std::string& path) {
  auto text = files::read_file(path);
  return config::config_hash(text.value_or(""));
}

void setup_logging(const config::DeploymentConfig& c) {
  static const std::map<std::string, log::Level> levels = {{"debug", log::Level::kDebug},
                                                           {"info", log::Level::kInfo},
                                                           {"warn", log::Level::kWarn},
                                                           {"error", log::Level::kError}};
  log::set_level(levels.at(c.log_level));
  if (!c.log_file.empty()) log::set_file(c.log_file);
}

// Blocks SIGINT/SIGTERM for all threads started afterwards and returns the
// set to wait on.
sigset_t block_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

void wait_for_signal(const sigset_t& set) {
  int sig = 0;
  sigwait(&set, &sig);
  HPC_LOG_WARN("signal " << sig << ", shutting down");
}

std::string self_exe() {
  std::error_code ec;
  auto p = std::filesystem::read_symlink("/proc/self/exe", ec);
  return ec ? std::string("hpcserve") : p.string();
}

LocalStackOptions stack_options(const config::DeploymentConfig& c) {
  if (c.scheduler.cluster != "sim") {
    throw Failure{kExitInvalid, "scheduler.cluster: the local stack needs \"sim\""};
  }
  LocalStackOptions o;
  o.config = c;
  o.ingress_port = c.proxy.listen_port;
  o.operator_port = c.proxy.operator_port;
  o.seed = c.scheduler.seed != 0 ? c.scheduler.seed : std::random_device{}();
  return o;
}

// --------------------------------------------------------------------------

int run_interface(const std::string& config_path) {
  auto c = load(config_path);
  setup_logging(c);
  const char* original = std::getenv("SSH_ORIGINAL_COMMAND");
  std::string command = original != nullptr ? original : "";

  interface::HttpUpstream upstream;
  interface::CommandTrigger trigger({self_exe(), "run", "scheduler", "--once", "--config",
                                     std::filesystem::absolute(config_path).string()});
  interface::InterfaceEnv env;
  env.table_path = c.scheduler.table_path;
  env.state_path = c.scheduler.state_path;
  env.load_dir = c.scheduler.load_dir;
  env.node_addresses = c.scheduler.node_addresses;
  env.clock = &SystemClock::instance();
  env.upstream = &upstream;
  env.trigger = &trigger;
  FdSource in(0);
  FdSink out(1);
  return interface::handle_invocation(command, in, out, env);
}

int run_scheduler(const std::string& config_path, bool once) {
  auto c = load(config_path);
  setup_logging(c);
  if (c.scheduler.cluster != "slurm") {
    throw Failure{kExitInvalid, "scheduler.cluster: standalone scheduler needs \"slurm\"; use run sim"};
  }
  const auto& sc = c.scheduler;
  files::ensure_directory(sc.load_dir);
  SlurmCli cluster(sc.slurm);
  HttpProber prober(sc.node_addresses, sc.probe_timeout_ms);
  scheduler::Scheduler sched({sc.lock_path, sc.table_path, sc.state_path, sc.load_dir}, cluster,
                             prober, SystemClock::instance(),
                             sc.seed != 0 ? sc.seed : std::random_device{}());
  sched.set_services(sc.services);
  if (!sc.schedule.empty()) {
    sched.set_swapper(std::make_shared<scheduler::ConfigSwapper>(
        sc.schedule, config::load_services_file, sc.backup_path, sc.utc_offset_minutes));
  }
  if (once) {
    sched.run_once();
    return kExitOk;
  }
  auto signals = block_signals();
  std::atomic<bool> stop{false};
  std::thread waiter([&] {
    wait_for_signal(signals);
    stop = true;
  });
  while (!stop) {
    sched.run_once();
    for (Millis slept = 0; slept < sc.timer_period_ms && !stop; slept += 100) {
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
  }
  waiter.join();
  return kExitOk;
}

int run_proxy(const std::string& config_path) {
  auto c = load(config_path);
  setup_logging(c);
  const auto& pc = c.proxy;
  if (pc.channel.transport != "exec") {
    throw Failure{kExitInvalid, "proxy.channel.transport: run proxy needs \"exec\"; use run all --local"};
  }
  auto signals = block_signals();
  channel::ExecTransport transport({pc.channel.argv,
                                    pc.channel.mode == "environment"
                                        ? channel::ExecTransport::CommandMode::kEnvironment
                                        : channel::ExecTransport::CommandMode::kArgument,
                                    std::chrono::milliseconds(pc.channel.connect_timeout_ms)});
  proxy::ChannelSupervisor supervisor(transport, SystemClock::instance(), pc.supervisor);
  proxy::Proxy proxy({pc.routes, pc.request_timeout_ms, pc.worker_threads, pc.access_log}, transport,
                     supervisor, SystemClock::instance());
  if (!proxy.start(pc.listen_host, pc.listen_port, pc.operator_host, pc.operator_port)) {
    throw Failure{kExitRuntime, "cannot bind proxy ports"};
  }
  supervisor.start();
  std::cerr << "proxy listening on " << pc.listen_host << ":" << proxy.ingress_port()
            << ", operator on " << pc.operator_host << ":" << proxy.operator_port() << "\n";
  wait_for_signal(signals);
  supervisor.stop();
  proxy.stop();
  return kExitOk;
}

int run_local(const std::string& config_path, bool with_proxy) {
  auto c = load(config_path);
  setup_logging(c);
  auto signals = block_signals();
  auto options = stack_options(c);
  options.start_proxy = with_proxy;
  options.timer_ticks = !with_proxy;
  LocalStack stack(options);
  if (!stack.start()) throw Failure{kExitRuntime, "cannot bind proxy ports"};
  if (with_proxy) {
    std::cerr << "local stack: ingress " << c.proxy.listen_host << ":" << stack.proxy().ingress_port()
              << ", operator " << c.proxy.operator_host << ":" << stack.proxy().operator_port() << "\n";
  } else {
    std::cerr << "simulator running; routing table at " << c.scheduler.table_path << "\n";
  }
  wait_for_signal(signals);
  stack.stop();
  return kExitOk;
}

struct BenchArgs {
  std::string config_path;
  std::string key_id;
  std::string model;
  std::string json_path;
  int ready_timeout_s = 120;
};

bench::Target bench_target(const config::DeploymentConfig& c, const BenchArgs& a, LocalStack& stack) {
  bench::Target t;
  t.host = c.proxy.listen_host;
  t.ingress_port = stack.proxy().ingress_port();
  t.operator_port = stack.proxy().operator_port();
  t.url_prefix = c.proxy.routes.url_prefix;
  if (c.proxy.routes.keys.empty()) throw Failure{kExitInvalid, "proxy.api_keys: bench needs a key"};
  const proxy::ApiKey* key = &c.proxy.routes.keys.front();
  for (const auto& k : c.proxy.routes.keys) {
    if (k.id == a.key_id) key = &k;
  }
  t.api_key = key->secret;
  if (c.proxy.routes.models.empty()) throw Failure{kExitInvalid, "proxy.routes: bench needs a route"};
  auto route = c.proxy.routes.models.begin();
  if (!a.model.empty()) {
    route = c.proxy.routes.models.find(a.model);
    if (route == c.proxy.routes.models.end()) throw Failure{kExitInvalid, "unknown model " + a.model};
  }
  t.model = route->first;
  t.service = route->second;
  return t;
}

void emit(const std::string& table, const std::string& json, const std::string& json_path) {
  std::cout << table;
  if (json_path.empty()) {
    std::cout << json << "\n";
  } else {
    files::write_file_atomic(json_path, json + "\n");
  }
}

std::unique_ptr<LocalStack> start_bench_stack(const config::DeploymentConfig& c, const BenchArgs& a,
                                              bench::Target& target) {
  auto options = stack_options(c);
  options.ingress_port = 0;
  options.operator_port = 0;
  auto stack = std::make_unique<LocalStack>(options);
  if (!stack->start()) throw Failure{kExitRuntime, "cannot bind proxy ports"};
  target = bench_target(c, a, *stack);
  auto& service = target.service;
  int want = 1;
  for (const auto& s : c.scheduler.services) {
    if (s.name == service) want = std::max(1, s.min_instances);
  }
  if (!stack->wait_until_ready(service, want, a.ready_timeout_s * 1000)) {
    throw Failure{kExitRuntime, "service " + service + " did not become ready"};
  }
  for (int i = 0; i < 100 && !stack->supervisor().connected(); ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  return stack;
}

int bench_latency(const BenchArgs& a, int samples, double max_p50_ms) {
  auto c = load(a.config_path);
  setup_logging(c);
  bench::Target target;
  auto stack = start_bench_stack(c, a, target);
  auto report = bench::bench_latency(target, samples);
  report.config_hash = config_text_hash(a.config_path);
  stack->stop();
  emit(bench::to_table(report), bench::to_json(report), a.json_path);
  if (report.errors > 0) return kExitRuntime;
  if (max_p50_ms > 0 && report.rows.back().stat.p50 > max_p50_ms) return kExitThreshold;
  return kExitOk;
}

int bench_throughput(const BenchArgs& a, const std::string& stage, double duration_s, int concurrency,
                     double min_rps) {
  auto c = load(a.config_path);
  setup_logging(c);
  std::vector<bench::Stage> stages;
  if (stage == "all") {
    stages = {bench::Stage::kIngressOnly, bench::Stage::kChannel, bench::Stage::kFullPath};
  } else if (auto s = bench::stage_from_string(stage)) {
    stages = {*s};
  } else {
    throw Failure{kExitInvalid, "unknown stage " + stage};
  }
  bench::Target target;
  auto stack = start_bench_stack(c, a, target);
  std::vector<bench::ThroughputReport> reports;
  for (auto s : stages) {
    bench::ThroughputOptions o;
    o.stage = s;
    o.concurrency = concurrency;
    o.duration_ms = static_cast<Millis>(duration_s * 1000);
    auto r = bench::bench_throughput(target, o);
    r.config_hash = config_text_hash(a.config_path);
    reports.push_back(r);
    if (r.aborted) break;
  }
  stack->stop();
  emit(bench::to_table(reports), bench::to_json(reports), a.json_path);
  for (const auto& r : reports) {
    if (r.aborted) return kExitRuntime;
  }
  if (min_rps > 0 && reports.back().rps < min_rps) return kExitThreshold;
  return kExitOk;
}

int run_scenario(const std::string& path, const std::string& work_dir) {
  auto text = files::read_file(path);
  if (!text) throw Failure{kExitInvalid, path + ": cannot read"};
  scenario::Scenario s;
  try {
    s = scenario::parse_scenario(*text);
  } catch (const scenario::ScenarioError& e) {
    throw Failure{kExitInvalid, path + ": " + e.what()};
  }
  std::string dir = work_dir;
  if (dir.empty()) {
    dir = (std::filesystem::temp_directory_path() / ("hpcserve-scenario-" + std::to_string(::getpid())))
              .string();
  }
  auto result = scenario::run_scenario(s, dir);
  if (work_dir.empty()) std::filesystem::remove_all(dir);
  for (const auto& line : result.timeline) std::cout << line << "\n";
  std::cout << "submissions " << result.submissions << ", ready cancellations "
            << result.ready_cancellations << ", config " << config::config_hash(*text) << "\n";
  for (const auto& f : result.failures) std::cerr << "FAIL " << f << "\n";
  return result.failures.empty() ? kExitOk : kExitThreshold;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hpcserve: LLM serving over a batch-scheduled cluster"};
  app.require_subcommand(1);

  std::string config_path = "hpcserve.json";

  auto* run = app.add_subcommand("run", "Start a component");
  std::string component;
  bool local = false;
  bool once = false;
  run->add_option("component", component, "proxy | interface | scheduler | sim | all")
      ->required()
      ->check(CLI::IsMember({"proxy", "interface", "scheduler", "sim", "all"}));
  run->add_option("-c,--config", config_path, "Deployment config");
  run->add_flag("--local", local, "With all: everything in-process over a loopback channel");
  run->add_flag("--once", once, "With scheduler: one tick, then exit");

  BenchArgs bench_args;
  auto add_bench_options = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", bench_args.config_path, "Deployment config")->required();
    cmd->add_option("--key", bench_args.key_id, "API key id (default: first)");
    cmd->add_option("--model", bench_args.model, "Model (default: first route)");
    cmd->add_option("--json", bench_args.json_path, "Write the JSON report here");
    cmd->add_option("--ready-timeout", bench_args.ready_timeout_s, "Seconds to wait for READY");
  };
  auto* latency = app.add_subcommand("bench-latency", "Latency breakdown on a local stack");
  int samples = 50;
  double max_p50 = 0;
  add_bench_options(latency);
  latency->add_option("--samples", samples, "Samples per cut point")->check(CLI::PositiveNumber);
  latency->add_option("--max-p50-ms", max_p50, "Exit 3 if first-token p50 exceeds this");

  auto* throughput = app.add_subcommand("bench-throughput", "Closed-loop RPS per stage");
  std::string stage = "all";
  double duration = 30;
  int concurrency = 16;
  double min_rps = 0;
  add_bench_options(throughput);
  throughput->add_option("--stage", stage, "ingress-only | channel | full-path | all");
  throughput->add_option("--duration", duration, "Seconds per stage")->check(CLI::PositiveNumber);
  throughput->add_option("--concurrency", concurrency, "Workers")->check(CLI::PositiveNumber);
  throughput->add_option("--min-rps", min_rps, "Exit 3 if the last stage is below this");

  auto* scen = app.add_subcommand("scenario", "Replay a cluster scenario in virtual time");
  std::string scenario_path;
  std::string work_dir;
  scen->add_option("file", scenario_path)->required();
  scen->add_option("--work-dir", work_dir, "Keep state files here");

  auto* check = app.add_subcommand("check-config", "Validate a deployment config");
  check->add_option("-c,--config", config_path, "Deployment config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (run->parsed()) {
      if (component == "interface") return run_interface(config_path);
      if (component == "scheduler") return run_scheduler(config_path, once);
      if (component == "proxy") return run_proxy(config_path);
      if (component == "sim") return run_local(config_path, false);
      if (!local) throw Failure{kExitInvalid, "run all requires --local"};
      return run_local(config_path, true);
    }
    if (latency->parsed()) return bench_latency(bench_args, samples, max_p50);
    if (throughput->parsed()) return bench_throughput(bench_args, stage, duration, concurrency, min_rps);
    if (scen->parsed()) return run_scenario(scenario_path, work_dir);
    if (check->parsed()) {
      load(config_path);
      std::cout << config_path << ": ok\n";
      return kExitOk;
    }
  } catch (const Failure& f) {
    std::cerr << "hpcserve: " << f.message << "\n";
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "hpcserve: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

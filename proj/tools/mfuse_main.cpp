// Copyright 2026 The mfuse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end: run, compare, shootout, gen-scenario.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "mfuse/pipeline.hpp"
#include "mfuse/sim.hpp"

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string scenario;
  std::optional<double> threshold;
  std::optional<std::uint64_t> seed;
  std::string out;
  unsigned threads = 1;
};

void addCommon(CLI::App* cmd, Common& c) {
  cmd->add_option("--scenario", c.scenario, "Scenario file (JSON)")->required();
  cmd->add_option("--threshold", c.threshold, "Consensus threshold override (m/s)");
  cmd->add_option("--seed", c.seed, "Seed override");
  cmd->add_option("--out", c.out, "Output directory")->required();
  cmd->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
}

mfuse::Scenario loadResolved(const Common& c) {
  mfuse::Scenario s = mfuse::loadScenario(c.scenario);
  if (c.threshold) s.pipeline.consensus.threshold = *c.threshold;
  if (c.seed) s.seed = *c.seed;
  s.validate();
  return s;
}

mfuse::Strategy parseStrategy(const std::string& text, const mfuse::Scenario& s) {
  mfuse::Strategy st;
  try {
    st = mfuse::Strategy::parse(text);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (st.kind == mfuse::Strategy::Kind::FuseSingle) {
    bool known = false;
    for (const auto& spec : s.sensors) known |= spec.id == st.sensor;
    if (!known) throw UsageError("strategy names unknown sensor " + st.sensor);
  }
  return st;
}

void printReport(const std::vector<mfuse::RunResult>& results) {
  mfuse::writeReportHeader(std::cout);
  for (const auto& r : results) mfuse::writeReportRow(std::cout, r.strategy, r.report);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Consensus-based multi-sensor fusion simulator and evaluator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", mfuse::versionString());

  Common run_opts;
  std::string run_strategy = "consensus";
  auto* run = app.add_subcommand("run", "Run one strategy and write every timeline");
  addCommon(run, run_opts);
  run->add_option("--strategy", run_strategy, "single:<id>, clean:<id>, naive or consensus");

  Common cmp_opts;
  std::vector<std::string> cmp_strategies;
  auto* compare = app.add_subcommand("compare", "Compare strategies on one scenario");
  addCommon(compare, cmp_opts);
  compare->add_option("--strategy", cmp_strategies, "Strategy (repeat, at least two)")
      ->delimiter(',');

  Common sho_opts;
  auto* shootout = app.add_subcommand("shootout", "Evaluate all metrics side by side");
  addCommon(shootout, sho_opts);

  std::string gen_out;
  std::optional<std::uint64_t> gen_seed;
  auto* gen = app.add_subcommand("gen-scenario", "Write the default indoor scenario");
  gen->add_option("--out", gen_out, "Scenario file to write")->required();
  gen->add_option("--seed", gen_seed, "Seed override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*gen) {
      mfuse::Scenario s = mfuse::defaultIndoorScenario();
      if (gen_seed) s.seed = *gen_seed;
      std::ofstream out(gen_out, std::ios::binary);
      if (!out) throw std::runtime_error("cannot write " + gen_out);
      out << mfuse::dumpScenario(s);
      return 0;
    }
    if (*run) {
      const mfuse::Scenario s = loadResolved(run_opts);
      const mfuse::Strategy st = parseStrategy(run_strategy, s);
      const mfuse::SimulationOutput sim = mfuse::simulate(s, run_opts.threads);
      const mfuse::RunResult result = mfuse::runPipeline(s, sim, st);
      mfuse::writeRunOutputs(run_opts.out, s, sim, result);
      printReport({result});
      return 0;
    }
    if (*compare) {
      const mfuse::Scenario s = loadResolved(cmp_opts);
      std::vector<mfuse::Strategy> strategies;
      for (const auto& text : cmp_strategies) strategies.push_back(parseStrategy(text, s));
      if (strategies.size() < 2) throw UsageError("compare needs at least two --strategy values");
      const mfuse::SimulationOutput sim = mfuse::simulate(s, cmp_opts.threads);
      const auto results = mfuse::compareStrategies(s, sim, strategies, cmp_opts.threads);
      mfuse::writeProvenance(cmp_opts.out, s);
      std::ofstream out(std::filesystem::path(cmp_opts.out) / "compare.csv", std::ios::binary);
      if (!out) throw std::runtime_error("cannot write compare.csv");
      mfuse::writeReportHeader(out);
      for (const auto& r : results) mfuse::writeReportRow(out, r.strategy, r.report);
      printReport(results);
      return 0;
    }
    if (*shootout) {
      const mfuse::Scenario s = loadResolved(sho_opts);
      const mfuse::SimulationOutput sim = mfuse::simulate(s, sho_opts.threads);
      const auto records = mfuse::metricShootout(s, sim);
      mfuse::writeProvenance(sho_opts.out, s);
      std::ofstream out(std::filesystem::path(sho_opts.out) / "shootout.csv", std::ios::binary);
      if (!out) throw std::runtime_error("cannot write shootout.csv");
      mfuse::writeShootoutCsv(out, records);
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}

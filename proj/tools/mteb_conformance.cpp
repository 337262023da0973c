// Runs the MTEB/1 conformance checks against a server endpoint.
//
//   mteb_conformance stdio:"python3 -m sidecar --stub --dim 64"
//   mteb_conformance 127.0.0.1:7000 --requests 1000

#include <iostream>

#include "CLI11.hpp"
#include "tomembed/sidecar.hpp"

int main(int argc, char** argv) {
  CLI::App app{"MTEB/1 server conformance harness"};
  std::string endpoint;
  std::size_t requests = 1000;
  long timeout_ms = 30000;
  app.add_option("endpoint", endpoint, "host:port or stdio:<command>")->required();
  app.add_option("--requests", requests, "Pipelined requests")->check(CLI::PositiveNumber);
  app.add_option("--timeout-ms", timeout_ms, "Per-operation timeout")->check(CLI::PositiveNumber);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const auto report =
      tomembed::mteb::run_conformance(endpoint, requests, std::chrono::milliseconds(timeout_ms));
  for (const auto& c : report.checks) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
  }
  return report.passed() ? 0 : 1;
}

// HTTP JSON service for the puppeteer console.
//   serve --models dir/ --port 8080

#include <iostream>
#include <memory>

#include "steer/http.hpp"

#include "common.hpp"

int main(int argc, char** argv) {
  using namespace steer;
  CLI::App app{"serve the generation toolkit over HTTP", "serve"};
  std::string models, host = "127.0.0.1";
  int port = 8080;
  app.add_option("--models", models, "models directory")->required();
  app.add_option("--port", port, "TCP port")->capture_default_str();
  app.add_option("--host", host, "bind address")->capture_default_str();

  return tools::run(app, argc, argv, [&] {
    auto store = std::make_shared<const service::ModelStore>(service::ModelStore::load(models));
    service::Service svc(store);
    httplib::Server server;
    service::register_routes(server, svc);
    std::cerr << "serving " << models << " on http://" << host << ':' << port << '\n';
    if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
  });
}

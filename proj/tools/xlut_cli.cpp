#include <iostream>

#include "xlut/cli.hpp"
#include "xlut/service.hpp"

namespace {

int serve(int port, const std::string& host, const std::optional<std::string>& ckpt, const std::string& data,
          std::ostream& out) {
  xlut::service::Config cfg;
  cfg.data_dir = data;
  if (ckpt) cfg.checkpoint = *ckpt;
  xlut::service::Service svc(cfg);
  httplib::Server srv;
  svc.mount(srv);
  const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
  if (bound < 0) {
    std::cerr << "error: cannot bind " << host << ":" << port << "\n";
    return 1;
  }
  out << "listening on http://" << host << ":" << bound << (svc.has_model() ? " (model loaded)" : "") << std::endl;
  return srv.listen_after_bind() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) { return xlut::cli::run(argc, argv, std::cout, std::cerr, serve); }

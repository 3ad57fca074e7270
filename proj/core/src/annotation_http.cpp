#include <httplib.h>

#include <atomic>
#include <stdexcept>

#include "cotbench/annotation.hpp"
#include "cotbench/evalharness.hpp"

namespace cotbench {

namespace {

void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view kind, const std::string& message) {
  send_json(res, status, Json{{"error", kind}, {"message", message}});
}

// Maps domain exceptions onto HTTP statuses.
template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const UnknownCampaign& e) {
    send_error(res, 404, "unknown_campaign", e.what());
  } catch (const UnknownTask& e) {
    send_error(res, 404, "unknown_task", e.what());
  } catch (const UnknownAnnotator& e) {
    send_error(res, 404, "unknown_annotator", e.what());
  } catch (const NoActiveLease& e) {
    send_error(res, 409, "no_active_lease", e.what());
  } catch (const DuplicateSubmission& e) {
    send_error(res, 409, "duplicate_submission", e.what());
  } catch (const IncompleteCampaign& e) {
    send_json(res, 409, Json{{"error", "incomplete_campaign"}, {"message", e.what()}, {"missing", e.missing()}});
  } catch (const InvalidVerdict& e) {
    send_error(res, 422, "invalid_verdict", e.what());
  } catch (const Json::exception& e) {
    send_error(res, 400, "bad_request", e.what());
  } catch (const PreconditionError& e) {
    send_error(res, 422, "precondition", e.what());
  } catch (const std::invalid_argument& e) {
    send_error(res, 400, "bad_request", e.what());
  } catch (const std::out_of_range& e) {
    send_error(res, 400, "bad_request", e.what());
  } catch (const DataError& e) {
    send_error(res, 422, "data", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

}  // namespace

struct AnnotationServer::Impl {
  CampaignStore& store;
  ServerOptions options;
  ImageLoader loader;
  httplib::Server server;

  Impl(CampaignStore& s, ServerOptions o)
      : store(s), options(std::move(o)), loader(default_image_loader(options.image_root)) {
    routes();
  }

  void routes() {
    server.Post("/campaigns", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const Json body = Json::parse(req.body);
        Dataset ds;
        for (const auto& s : body.at("dataset")) ds.samples.push_back(s.get<EvaluationSample>());
        const auto annotators = body.at("annotators").get<std::vector<std::string>>();
        const auto k = body.value("redundancy", annotators.size());
        const auto n = ds.samples.size();
        const std::string id = store.create_campaign(std::move(ds), annotators, k);
        send_json(res, 201, Json{{"campaign_id", id}, {"task_count", n * k}});
      });
    });

    server.Get(R"(/campaigns/([^/]+)/tasks/next)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        if (!req.has_param("annotator")) {
          send_error(res, 400, "bad_request", "annotator query parameter required");
          return;
        }
        double lease = kDefaultLeaseSeconds;
        if (req.has_param("lease_seconds")) lease = std::stod(req.get_param_value("lease_seconds"));
        auto task = store.lease_task(req.matches[1], req.get_param_value("annotator"), lease);
        if (!task) {
          res.status = 204;
          return;
        }
        send_json(res, 200, leased_task_json(*task));
      });
    });

    server.Post(R"(/tasks/([^/]+)/verdict)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto verdict = Json::parse(req.body).get<AnnotationVerdict>();
        store.submit_verdict(req.matches[1], verdict);
        send_json(res, 200, Json{{"status", "ok"}, {"task_id", req.matches[1]}});
      });
    });

    server.Get(R"(/campaigns/([^/]+)/progress)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto p = store.progress(req.matches[1]);
        send_json(res, 200,
                  Json{{"tasks", p.tasks},
                       {"submitted", p.submitted},
                       {"leased", p.leased},
                       {"open", p.open},
                       {"complete", p.submitted == p.tasks}});
      });
    });

    server.Post(R"(/campaigns/([^/]+)/aggregate)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        RebalanceOptions rb;
        if (!req.body.empty()) {
          const Json body = Json::parse(req.body);
          if (auto it = body.find("rebalance"); it != body.end()) {
            rb.seed = it->value("seed", std::uint64_t{0});
            if (it->contains("default_fraction")) rb.default_fraction = it->at("default_fraction").get<double>();
            if (it->contains("fractions")) rb.fractions = it->at("fractions").get<std::map<std::string, double>>();
          }
        }
        send_json(res, 200, summary_to_json(store.aggregate(req.matches[1], rb)));
      });
    });

    server.Get(R"(/campaigns/([^/]+)/images/(.+)\.png)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        EvaluationSample sample;
        try {
          sample = store.sample(req.matches[1], req.matches[2]);
        } catch (const UnknownCampaign&) {
          throw;
        } catch (const PreconditionError& e) {
          send_error(res, 404, "unknown_sample", e.what());
          return;
        }
        std::vector<std::uint8_t> raw;
        try {
          raw = loader(sample.image);
        } catch (const std::exception& e) {
          send_error(res, 404, "image_unavailable", e.what());
          return;
        }
        Raster img = decode_image(raw);
        burn_in_region(img, sample.region, options.burn_in);
        const auto png = encode_png(img);
        res.status = 200;
        res.set_content(std::string(png.begin(), png.end()), "image/png");
      });
    });
  }
};

AnnotationServer::AnnotationServer(CampaignStore& store, ServerOptions options)
    : impl_(std::make_unique<Impl>(store, std::move(options))) {}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw Error("cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void AnnotationServer::serve() { impl_->server.listen_after_bind(); }

void AnnotationServer::stop() {
  if (impl_) impl_->server.stop();
}

void AnnotationServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace cotbench

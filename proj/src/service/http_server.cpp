// SPDX-License-Identifier: Apache-2.0
#include "textforge/service.hpp"

#include "httplib.h"
#include "json.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace textforge::service {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::set<std::string> kJsonFields = {"seed",  "lambda_content", "lambda_style", "gamma",         "steps",
                                           "sai_fraction", "car_fraction", "opt_iters", "learning_rate", "shrink_height",
                                           "opt_stages"};
const std::set<std::string> kImageFields = {"image", "mask", "target_mask", "ref", "ref_mask"};

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(2), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, json{{"error", message}});
}

/// Runs a handler and maps exceptions to status codes.
template <typename F>
void guarded(httplib::Response& res, F&& body) {
    try {
        body();
    } catch (const NotFoundError& e) {
        send_error(res, 404, e.what());
    } catch (const ValidationError& e) {
        send_error(res, 400, e.what());
    } catch (const ContractError& e) {
        send_error(res, 400, e.what());
    } catch (const std::exception& e) {
        send_error(res, 500, e.what());
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot read " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

const char* content_type_for(const fs::path& path) {
    const std::string ext = path.extension().string();
    if (ext == ".png") return "image/png";
    if (ext == ".json") return "application/json";
    return "application/octet-stream";
}

json record_json(const JobRecord& rec) { return json::parse(job_record_to_json(rec)); }

/// Text fields of a multipart request folded into one JSON object.
json multipart_fields(const httplib::Request& req) {
    json fields = json::object();
    for (const auto& [key, item] : req.files) {
        if (kImageFields.count(key)) continue;
        if (key == "params") {
            json params;
            try {
                params = json::parse(item.content);
            } catch (const json::parse_error& e) {
                throw ValidationError(std::string("malformed params field: ") + e.what());
            }
            if (!params.is_object()) throw ValidationError("params field must be a JSON object");
            fields.update(params);
        } else if (kJsonFields.count(key)) {
            try {
                fields[key] = json::parse(item.content);
            } catch (const json::parse_error&) {
                throw ValidationError("field '" + key + "' is not a number");
            }
        } else {
            fields[key] = item.content;
        }
    }
    return fields;
}

Image decode_upload(const httplib::MultipartFormData& file) {
    try {
        return decode_png(file.content);
    } catch (const std::exception& e) {
        throw ValidationError("upload '" + file.name + "' is not a PNG: " + e.what());
    }
}

/// Resolves a client path against the workspace and refuses anything outside it.
fs::path inside_workspace(const fs::path& workspace, const fs::path& p) {
    if (p.empty()) return p;
    const fs::path root = fs::weakly_canonical(workspace);
    const fs::path full = fs::weakly_canonical(p.is_relative() ? workspace / p : p);
    auto r = root.begin();
    auto f = full.begin();
    for (; r != root.end(); ++r, ++f)
        if (f == full.end() || *r != *f) throw ValidationError("path " + p.string() + " is outside the workspace");
    return full;
}

}  // namespace

struct HttpServer::Impl {
    explicit Impl(JobService& s) : service(s) { routes(); }

    JobService& service;
    httplib::Server server;

    void routes() {
        server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                    {"Access-Control-Expose-Headers", "X-Shrink-Ratio"}});
        server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
            res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
            res.set_header("Access-Control-Allow-Headers", "Content-Type");
            res.status = 204;
        });

        server.Get("/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"status", "ok"}}); });

        server.Get("/jobs", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] {
                json arr = json::array();
                for (const JobRecord& rec : service.list()) arr.push_back(record_json(rec));
                send_json(res, 200, arr);
            });
        });

        server.Post("/jobs", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { submit(req, res); });
        });

        server.Get(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { send_json(res, 200, record_json(service.status(req.matches[1]))); });
        });

        server.Get(R"(/jobs/([^/]+)/result)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const JobRecord rec = service.status(req.matches[1]);
                if (rec.state != JobState::done) {
                    json body{{"id", rec.id}, {"state", to_string(rec.state)}, {"progress", rec.progress}};
                    body["error"] = rec.state == JobState::failed ? rec.error : "job is not finished";
                    send_json(res, 409, body);
                    return;
                }
                json urls = json::object();
                for (const std::string& name : rec.artifacts) urls[name] = "/jobs/" + rec.id + "/artifacts/" + name;
                send_json(res, 200,
                          {{"id", rec.id},
                           {"state", "done"},
                           {"output", "/jobs/" + rec.id + "/artifacts/output.png"},
                           {"artifacts", urls},
                           {"timings", rec.timings},
                           {"warnings", rec.warnings}});
            });
        });

        server.Get(R"(/jobs/([^/]+)/attention/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const std::string id = req.matches[1];
                const int step = std::stoi(req.matches[2]);
                json arr = json::array();
                for (const AttentionSnapshot& s : service.attention_snapshots(id, step))
                    arr.push_back({{"phase", s.phase},
                                   {"step", s.step},
                                   {"site", s.site},
                                   {"label", s.label},
                                   {"url", "/jobs/" + id + "/artifacts/" + s.file}});
                send_json(res, 200, {{"id", id}, {"step", step}, {"snapshots", arr}});
            });
        });

        server.Get(R"(/jobs/([^/]+)/artifacts/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const fs::path path = service.artifact_path(req.matches[1], req.matches[2]);
                res.set_content(read_file(path), content_type_for(path));
            });
        });

        server.Post("/preview/shrink", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { preview_shrink(req, res); });
        });
    }

    void submit(const httplib::Request& req, httplib::Response& res) {
        const EngineConfig& cfg = service.config();
        if (req.is_multipart_form_data()) {
            const json fields = multipart_fields(req);
            if (!req.has_file("image") || !req.has_file("mask"))
                throw ValidationError("multipart job needs 'image' and 'mask' uploads");
            // Decode everything first so a bad upload does not leave a job directory behind.
            std::map<std::string, Image> uploads;
            for (const std::string& name : kImageFields)
                if (req.has_file(name)) uploads[name] = decode_upload(req.get_file_value(name));
            JobRequest request = job_request_from_json(fields.dump(), cfg, {});
            auto [id, dir] = service.prepare_job();
            auto store = [&](const std::string& name, fs::path& field) {
                const auto it = uploads.find(name);
                if (it == uploads.end()) return;
                field = fs::path("inputs") / (name + ".png");
                write_png(dir / field, it->second);
            };
            store("image", request.image);
            store("mask", request.mask);
            store("target_mask", request.target_mask);
            store("ref", request.ref_image);
            store("ref_mask", request.ref_mask);
            service.submit_prepared(id, std::move(request));
            send_json(res, 202, {{"id", id}, {"state", "queued"}});
            return;
        }
        JobRequest request = job_request_from_json(req.body, cfg, {});
        request.image = inside_workspace(cfg.workspace, request.image);
        request.mask = inside_workspace(cfg.workspace, request.mask);
        request.target_mask = inside_workspace(cfg.workspace, request.target_mask);
        request.ref_image = inside_workspace(cfg.workspace, request.ref_image);
        request.ref_mask = inside_workspace(cfg.workspace, request.ref_mask);
        const std::string id = service.submit(request);
        send_json(res, 202, {{"id", id}, {"state", "queued"}});
    }

    void preview_shrink(const httplib::Request& req, httplib::Response& res) {
        const EngineConfig& cfg = service.config();
        Image mask;
        json fields;
        if (req.is_multipart_form_data()) {
            fields = multipart_fields(req);
            if (!req.has_file("mask")) throw ValidationError("preview needs a 'mask' upload");
            mask = decode_upload(req.get_file_value("mask"));
        } else {
            try {
                fields = json::parse(req.body);
            } catch (const json::parse_error& e) {
                throw ValidationError(std::string("malformed request: ") + e.what());
            }
            if (!fields.is_object() || !fields.contains("mask")) throw ValidationError("preview needs a 'mask' path");
            const fs::path p = inside_workspace(cfg.workspace, fields.at("mask").get<std::string>());
            if (!fs::exists(p)) throw ValidationError("mask file " + p.string() + " does not exist");
            mask = read_png(p);
        }
        mask = to_gray(mask);
        const std::string source = fields.value("source_text", "");
        const std::string target = fields.value("target_text", fields.value("text", ""));
        if (source.empty() || target.empty()) throw ValidationError("preview needs source_text and target_text");
        masks::ShrinkOptions options;
        const std::string anchor = fields.value("anchor", "left");
        if (anchor == "center") options.anchor = masks::ShrinkAnchor::center;
        else if (anchor == "right") options.anchor = masks::ShrinkAnchor::right;
        else if (anchor != "left") throw ValidationError("unknown anchor '" + anchor + "'");
        options.shrink_height = fields.value("shrink_height", false);

        const int f = cfg.profile.downsample_factor;
        const SpatialDims latent{std::max(1, mask.height / f), std::max(1, mask.width / f)};
        const masks::ShrunkMask shrunk =
            masks::shrink_mask(mask, source, target, masks::CharWidthPriors::standard(), latent, options);
        res.set_header("X-Shrink-Ratio", std::to_string(shrunk.ratio));
        res.set_content(encode_png(shrunk.pixel), "image/png");
    }
};

HttpServer::HttpServer(JobService& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = impl_->server.bind_to_any_port(host);
        if (bound < 0) throw PipelineError("cannot bind " + host);
        return bound;
    }
    if (!impl_->server.bind_to_port(host, port)) throw PipelineError("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
    if (impl_) impl_->server.stop();
}

}  // namespace textforge::service

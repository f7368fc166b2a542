#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "medqa/dataset.hpp"

#include "medqa/inference.hpp"

namespace support {

inline std::filesystem::path source_dir() {
    return MEDQA_SOURCE_DIR;
}

inline std::filesystem::path fixtures_dir() {
    return source_dir() / "data" / "fixtures";
}

class TempDir {
public:
    TempDir() {
        std::random_device rd;
        std::ostringstream name;
        name << "medqa-test-" << std::hex << rd() << rd();
        path_ = std::filesystem::temp_directory_path() / name.str();
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

inline std::vector<medqa::QaRecord> e2e_records() {
    return medqa::read_dataset_file(fixtures_dir() / "e2e.en.jsonl").records;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& body) {
    std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << body;
}

inline std::string completion_body(const std::string& text, const std::string& finish = "stop") {
    nlohmann::json j;
    j["id"] = "cmpl-test";
    j["object"] = "text_completion";
    j["choices"] = nlohmann::json::array({{{"index", 0}, {"text", text}, {"finish_reason", finish}}});
    return j.dump();
}

inline std::string chat_body(const std::string& text) {
    nlohmann::json j;
    j["choices"] = nlohmann::json::array(
        {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", text}}}, {"finish_reason", "stop"}}});
    return j.dump();
}

/// Prompt text carried by a completions or chat request body.
inline std::string prompt_of(const std::string& request_body) {
    const auto j = nlohmann::json::parse(request_body);
    if (j.contains("prompt")) {
        return j["prompt"].get<std::string>();
    }
    return j["messages"].back()["content"].get<std::string>();
}

/// In-process transport driven by a callback.
class ScriptedTransport : public medqa::Transport {
public:
    using Handler = std::function<medqa::HttpReply(const std::string& path, const std::string& body)>;

    explicit ScriptedTransport(Handler h) : handler_(std::move(h)) {}

    medqa::HttpReply post(const std::string& path, const std::string& body, const medqa::HeaderList& headers,
                          std::chrono::milliseconds) override {
        ++calls_;
        {
            std::lock_guard lock(mu_);
            last_headers_ = headers;
        }
        const int now = ++in_flight_;
        int seen = max_in_flight_.load();
        while (now > seen && !max_in_flight_.compare_exchange_weak(seen, now)) {
        }
        if (delay_.count() > 0) {
            std::this_thread::sleep_for(delay_);
        }
        struct Leave {
            std::atomic<int>& n;
            ~Leave() { --n; }
        } leave{in_flight_};
        return handler_(path, body);
    }

    int calls() const { return calls_.load(); }
    int max_in_flight() const { return max_in_flight_.load(); }
    void set_delay(std::chrono::milliseconds d) { delay_ = d; }
    medqa::HeaderList last_headers() const {
        std::lock_guard lock(mu_);
        return last_headers_;
    }

private:
    Handler handler_;
    std::atomic<int> calls_{0};
    std::atomic<int> in_flight_{0};
    std::atomic<int> max_in_flight_{0};
    std::chrono::milliseconds delay_{0};
    mutable std::mutex mu_;
    medqa::HeaderList last_headers_;
};

/// OpenAI-compatible HTTP server on 127.0.0.1 answering from a callback
/// that maps the prompt text to a completion.
class MockServer {
public:
    using Responder = std::function<std::string(const std::string& prompt)>;

    explicit MockServer(Responder responder) : responder_(std::move(responder)) {
        auto handle = [this](const httplib::Request& req, httplib::Response& res) {
            ++requests_;
            const bool chat = req.path.find("chat") != std::string::npos;
            const std::string text = responder_(prompt_of(req.body));
            res.set_content(chat ? chat_body(text) : completion_body(text), "application/json");
        };
        server_.Post("/v1/completions", handle);
        server_.Post("/v1/chat/completions", handle);
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~MockServer() {
        server_.stop();
        thread_.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
    int requests() const { return requests_.load(); }
    void reset_requests() { requests_ = 0; }

private:
    Responder responder_;
    httplib::Server server_;
    int port_ = -1;
    std::thread thread_;
    std::atomic<int> requests_{0};
};

/// Forwards to a transport owned elsewhere, so a test can keep counting
/// calls after handing the CLI a unique_ptr.
class ForwardingTransport : public medqa::Transport {
public:
    explicit ForwardingTransport(medqa::Transport& target) : target_(target) {}
    medqa::HttpReply post(const std::string& path, const std::string& body, const medqa::HeaderList& headers,
                          std::chrono::milliseconds timeout) override {
        return target_.post(path, body, headers, timeout);
    }

private:
    medqa::Transport& target_;
};

/// Maps a rendered prompt to a canned completion by locating the question of
/// the target item (the text after the last "### Input:" marker).
class AnswerKey {
public:
    void add(const std::string& question, const std::string& completion) {
        entries_.emplace_back(question, completion);
    }

    std::string operator()(const std::string& prompt) const {
        const std::size_t at = prompt.rfind("### Input:");
        const std::string tail = at == std::string::npos ? prompt : prompt.substr(at);
        for (const auto& [q, completion] : entries_) {
            if (tail.find(q) != std::string::npos) {
                return completion;
            }
        }
        return "I do not know.";
    }

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

/// Completions for the ten e2e fixture items: the first seven quote the gold
/// choice, the last three quote a wrong choice. With `truncate_one`, the
/// second answer loses its final character.
inline AnswerKey e2e_answer_key(bool truncate_one = false) {
    AnswerKey key;
    const auto records = e2e_records();
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        std::string answer = i < 7 ? medqa::gold_answer_text(r) : r.choices[(r.gold.front() + 1) % r.choices.size()];
        if (truncate_one && i == 1) {
            answer.pop_back();
        }
        key.add(r.question, "The findings point to one option.\n\n" + answer + "\n");
    }
    return key;
}

inline medqa::CallContext quiet_context() {
    medqa::CallContext ctx;
    ctx.sleep = [](std::chrono::milliseconds) {};
    ctx.warn = [](const std::string&) {};
    return ctx;
}

}  // namespace support

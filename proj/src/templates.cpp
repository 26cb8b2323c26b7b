#include "reclm/templates.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace reclm {

std::string PromptTemplate::render(const std::map<std::string, std::string>& slots) const {
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '{') {
            auto close = text.find('}', i);
            if (close == std::string::npos)
                throw ConfigError("template " + id + ": unterminated placeholder");
            std::string name = text.substr(i + 1, close - i - 1);
            auto it = slots.find(name);
            if (it == slots.end())
                throw ConfigError("template " + id + ": unfilled placeholder {" + name + "}");
            out += it->second;
            i = close + 1;
        } else {
            out += text[i++];
        }
    }
    return out;
}

void TemplateRegistry::put(PromptTemplate tmpl) {
    if (templates_.count(tmpl.id)) throw ConfigError("duplicate template id: " + tmpl.id);
    templates_.emplace(tmpl.id, std::move(tmpl));
}

const PromptTemplate& TemplateRegistry::get(const std::string& id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) throw ConfigError("unknown template id: " + id);
    return it->second;
}

TemplateRegistry TemplateRegistry::defaults() {
    TemplateRegistry reg;
    reg.put({"system", TemplateRole::System,
             "You are a recommendation assistant. You study user interaction histories and write "
             "short preference profiles."});
    reg.put({"kd_query", TemplateRole::Query,
             "Write a preference profile for user {user_id}. Their interaction history: {history}."});
    reg.put({"two_turn_q1", TemplateRole::Query,
             "User {user_id} has interacted with: {target_history}. Similar users and their "
             "histories: {neighbor_histories}. Write a preference profile for user {user_id} and "
             "for each similar user."});
    reg.put({"profile_line", TemplateRole::Response, "Profile of user {user_id}: {profile}"});
    reg.put({"two_turn_q2", TemplateRole::Query,
             "Will user {user_id} interact with the item \"{item_title}\"? Answer Yes or No."});
    reg.put({"inference", TemplateRole::Query,
             "User {user_id} has interacted with: {target_history}. Similar users and their "
             "histories: {neighbor_histories}. Write a preference profile for user {user_id}."});
    reg.put({"item_from_interactors", TemplateRole::Query,
             "The item \"{item_title}\" is frequently consumed by users with these profiles: "
             "{profiles}. Write an audience profile for this item."});
    reg.put({"item_from_similar", TemplateRole::Query,
             "The item \"{item_title}\" is similar to: {similar_titles}. Their audience profiles: "
             "{profiles}. Write an audience profile for this item."});
    return reg;
}

namespace {
const char* role_name(TemplateRole r) {
    switch (r) {
        case TemplateRole::System: return "system";
        case TemplateRole::Query: return "query";
        case TemplateRole::Response: return "response";
    }
    return "query";
}
TemplateRole role_from(const std::string& s) {
    if (s == "system") return TemplateRole::System;
    if (s == "response") return TemplateRole::Response;
    return TemplateRole::Query;
}
}  // namespace

void TemplateRegistry::save_dir(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    for (const auto& [id, t] : templates_) {
        std::ofstream out(dir + "/" + id + ".tmpl");
        out << role_name(t.role) << '\n' << t.text;
    }
}

TemplateRegistry TemplateRegistry::load_dir(const std::string& dir) {
    TemplateRegistry reg;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() != ".tmpl") continue;
        std::ifstream in(entry.path());
        std::string role_line;
        std::getline(in, role_line);
        std::stringstream body;
        body << in.rdbuf();
        reg.put({entry.path().stem().string(), role_from(role_line), body.str()});
    }
    return reg;
}

}  // namespace reclm

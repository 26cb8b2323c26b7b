#pragma once

#include <map>
#include <string>

#include "reclm/core.hpp"

namespace reclm {

enum class TemplateRole { System, Query, Response };

struct PromptTemplate {
    std::string id;
    TemplateRole role = TemplateRole::Query;
    std::string text;  // named {slot} placeholders

    std::string render(const std::map<std::string, std::string>& slots) const;
};

class TemplateRegistry {
  public:
    static TemplateRegistry defaults();

    const PromptTemplate& get(const std::string& id) const;
    void put(PromptTemplate tmpl);  // rejects duplicate ids

    void save_dir(const std::string& dir) const;
    static TemplateRegistry load_dir(const std::string& dir);

  private:
    std::map<std::string, PromptTemplate> templates_;
};

}  // namespace reclm

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "droidlens/error.hpp"
#include "droidlens/fsutil.hpp"

namespace droidlens {

inline constexpr const char* kTemplateVersion = "v1";

/// Built-in prompt templates. Slots are written {{name}}.
inline const std::map<std::string, std::string>& default_templates() {
  static const std::map<std::string, std::string> kTemplates = {
      {"explorer.system",
       "You are an experienced mobile app tester. You explore an Android app function by function, "
       "looking for functional bugs that do not crash the app. You see annotated screenshots and answer "
       "strictly in the requested output format."},
      {"explorer.app_info",
       "GUI text info:\n"
       "The app under test is \"{{app_name}}\" (package {{package}}). Its activities are: {{activities}}.\n"
       "The current page belongs to activity {{activity}} and shows these texts: {{page_texts}}."},
      {"explorer.current_legend",
       "Legend of the current GUI screenshot (image 1):\n"
       "Every actionable widget is framed by a colored box: red = click, blue = input, purple = long-click, "
       "pink = check, yellow = scroll. Widgets are numbered from 1, row by row from top to bottom and from "
       "left to right inside a row. Only the first widget of each row shows its number; count along the "
       "row to number the others. This page has {{widget_count}} actionable widgets in {{row_count}} rows."},
      {"explorer.first_run",
       "Testing has just started: no function has been explored yet. Begin with the main functions of the app."},
      {"explorer.explored_functions",
       "Explored functions (name: visits):\n"
       "{{function_lines}}\n"
       "Prefer functions with few or no visits to avoid repeating the same exploration."},
      {"explorer.recent_legend",
       "Legend of recently tested screenshots (oldest first; the acted widget is framed in green):\n"
       "{{recent_lines}}"},
      {"explorer.recent_item", "Image {{image_no}}: {{function_label}} on {{activity}}, action: {{action}}"},
      {"explorer.action_general",
       "Querying action:\n"
       "Which action on the current page tests the app's functions most thoroughly next? Give the widget "
       "number from the screenshot together with the text of that widget.\n"
       "Output template:\n"
       "-Action: <click|long-click|check|scroll> -Widget: <number> -Text: <widget text> "
       "-Direction: <up|down|left|right, only for scroll>"},
      {"explorer.action_text_input",
       "Querying text input:\n"
       "The previous action focused a text field. Which field should receive text and what realistic "
       "value should be typed? Give the widget number together with the text of that widget.\n"
       "Output template:\n"
       "-Action: input -Widget: <number> -Text: <widget text> -Input: <text to type>"},
      {"explorer.feedback",
       "Testing feedback:\n"
       "{{feedback}}\n"
       "Your previous answer does not agree with the screenshot. Check the widget numbering again and "
       "answer once more with the same output template."},
      {"explorer.function_inquiry",
       "Querying function:\n"
       "Which app function is being tested on the current page, and how far has it progressed?\n"
       "Output template:\n"
       "-Function: <short function name> -Status: <started|ongoing|completed>"},
      {"explorer.bug_detect",
       "Bug detect:\n"
       "Look only at the attached screenshot of {{activity}}. Does this single page show a functional "
       "problem, such as values that contradict each other, wrong totals, missing or garbled content, or "
       "overlapping elements?\n"
       "Output template:\n"
       "-Bug: <yes|no> -Reason: <what is wrong, only if yes>"},
      {"detector.system",
       "You are an experienced mobile app tester. You review recorded test sequences of an Android app "
       "and decide whether the app behaves correctly across the pages of each sequence."},
      {"detector.app_info",
       "APP info:\n"
       "The app under test is \"{{app_name}}\" (package {{package}}). Its activities are: {{activities}}."},
      {"detector.legend",
       "Legend of GUI screenshots with function name:\n"
       "The {{image_count}} attached images are consecutive steps of one test sequence. In each image the "
       "widget acted on is framed in green. Steps are numbered from 0.\n"
       "{{step_lines}}"},
      {"detector.legend_item", "Step {{step_no}} (image {{image_no}}): {{function_label}} on {{activity}}, action: {{action}}"},
      {"detector.examples",
       "Examples of functional bugs reported for similar pages:\n"
       "{{example_lines}}"},
      {"detector.example_item",
       "Example {{example_no}}: {{description}}\n"
       "Reproduction: {{reproduction_path}}"},
      {"detector.question",
       "Bug detection question:\n"
       "Work out what the user is trying to achieve in this sequence and check whether every page "
       "transition produces the result that logic requires, for example that saved data shows up, deleted "
       "data disappears, totals add up and settings stay applied. Is there a bug in this test sequence? If "
       "so, which step first shows it?\n"
       "Output template:\n"
       "-Bug: <yes|no> -Step: <step number> -Reason: <description of the bug>"},
  };
  return kTemplates;
}

/// Named templates with optional per-file overrides from a directory
/// (`<name>.txt`, e.g. explorer.feedback.txt).
class TemplateSet {
 public:
  TemplateSet() : templates_(default_templates()) {}

  static TemplateSet with_overrides(const std::filesystem::path& dir) {
    TemplateSet set;
    if (!std::filesystem::is_directory(dir))
      throw Error(ErrorCode::ConfigError, "template directory not found: " + dir.string());
    for (const auto& [name, body] : default_templates()) {
      const auto file = dir / (name + ".txt");
      if (std::filesystem::exists(file)) {
        std::string content = fs::read_text(file);
        while (!content.empty() && (content.back() == '\n' || content.back() == '\r')) content.pop_back();
        set.templates_[name] = std::move(content);
      }
    }
    return set;
  }

  const std::string& raw(const std::string& name) const {
    const auto it = templates_.find(name);
    if (it == templates_.end()) throw Error(ErrorCode::ConfigError, "unknown template " + name);
    return it->second;
  }

  /// Substitutes every {{slot}}; a slot without a value is an error.
  std::string render(const std::string& name, const std::map<std::string, std::string>& vars = {}) const {
    const std::string& tpl = raw(name);
    std::string out;
    std::size_t pos = 0;
    while (true) {
      const auto open = tpl.find("{{", pos);
      if (open == std::string::npos) {
        out.append(tpl, pos);
        break;
      }
      const auto close = tpl.find("}}", open + 2);
      if (close == std::string::npos) throw Error(ErrorCode::ConfigError, "unterminated slot in " + name);
      out.append(tpl, pos, open - pos);
      const std::string key = tpl.substr(open + 2, close - open - 2);
      const auto v = vars.find(key);
      if (v == vars.end()) throw Error(ErrorCode::ConfigError, "template " + name + " slot {{" + key + "}} unfilled");
      out += v->second;
      pos = close + 2;
    }
    return out;
  }

 private:
  std::map<std::string, std::string> templates_;
};

/// Ordered named blocks that make up one request.
struct PromptBundle {
  std::string system;
  std::vector<std::pair<std::string, std::string>> sections;

  bool has(std::string_view name) const {
    for (const auto& [n, _] : sections)
      if (n == name) return true;
    return false;
  }

  std::string user_text() const {
    std::string out;
    for (const auto& [_, body] : sections) {
      if (!out.empty()) out += "\n\n";
      out += body;
    }
    return out;
  }
};

}  // namespace droidlens

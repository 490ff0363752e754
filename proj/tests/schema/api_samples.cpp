// Writes one document per API message, produced by the real handlers, for
// validation against docs/api.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "t2drisk/service.hpp"

using namespace t2drisk;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: api_samples <published_model.json> <out-dir>\n";
    return 1;
  }
  const ScoringService svc(load_published_model(argv[1]));
  const fs::path out = argv[2];
  fs::create_directories(out);
  auto put = [&](const std::string& name, const std::string& body) { std::ofstream(out / name) << body; };

  SubjectRecord r;
  r.age = 64;
  r.bmi = 31.5;
  r.ethnicity = Ethnicity::Asian;
  r.currently_smoking = true;
  r.pack_years = 22;
  r.diabetes_mother = true;
  const auto record = to_json(r);
  put("score_request.json", record.dump());
  put("score_response.json", svc.score(record.dump()).body);

  const nlohmann::json whatif = {{"base", record},
                                 {"modifications", {{"bmi", 26.0}, {"currently_smoking", false}}}};
  put("whatif_request.json", whatif.dump());
  put("whatif_response.json", svc.whatif(whatif.dump()).body);

  auto missing = record;
  missing.erase("bmi");
  put("error_400.json", svc.score(missing.dump()).body);
  put("error_409.json", svc.whatif(nlohmann::json{{"base", record}, {"modifications", {{"age", 70}}}}.dump()).body);
  auto bad_range = record;
  bad_range["bmi"] = -2.0;
  put("error_422.json", svc.score(bad_range.dump()).body);
  put("error_415.json", error_body(415, "Content-Type must be application/json"));
  put("health.json", svc.health().body);
  put("model.json", svc.model_info().body);
  return 0;
}

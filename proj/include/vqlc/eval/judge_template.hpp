#pragma once

// Judge prompt template and task blocks, stored verbatim. Placeholders are
// substituted by judge_request; the JSON example braces are literal text.

#include <string_view>

namespace vqlc::judge {

inline constexpr std::string_view kJudgeTemplate = R"TPL(You are an expert AI Judge evaluating Latent Concept based Explanation methods.
**Task:** Rank the concept sets based on **Evidence Strength** for the model's 
prediction.

**Context:**
- **Input Text:** {sentence}
- **Model Prediction:** {predicted label meaning}(Raw: {predicted label})

**Ranking Criteria:**
{Task Prompt}

**Concepts to Evaluate:**
Name: {Method1 Name}
Content: {concept content}

Name: {Method2 Name}
Content: {concept content}

Name: {Method3 Name}
Content: {concept content}

**Output Instructions:**
1. **TIES ARE ALLOWED:** If multiple configurations provide equally strong evidence
(or are equally noisy), **assign them the SAME rank**.
2. **Exact Names:** In the JSON output, the "configuration" field MUST match the 
Name provided above EXACTLY.

**Required JSON Format:**
{
  "ranking": [
    {"configuration": "Method2", "rank": 1, "reason": "Contains strong signal..."},
    {"configuration": "Method1", "rank": 1, "reason": "Contains strong signal..."},
    {"configuration": "Method3", "rank": 3, "reason": "Mostly noise..."}
  ]
}
)TPL";

inline constexpr std::string_view kTaskJigsawToxic = R"TPL(**TARGET CLASS: {prediction_label} (Offensive)**

**SIGNAL-TO-NOISE PRINCIPLE (Read Carefully):**
1. **Pure Signal (Best):** Concepts containing *only* relevant content words.
2. **Mixed Signal (Good/Okay):** Concepts containing strong relevant words mixed 
with some stopwords. 
   - *Do NOT rank these low just because of a few stopwords.* - If the key evidence
   (e.g., "kill", "love", "stocks") is present, it is still a GOOD concept.
   - However, if two concepts have the same signal, the one with fewer stopwords is 
   better.
3. **Pure Noise (Worst):** Concepts containing *only* stopwords (the, is, you) or 
punctuation. These explain nothing.

* **Rank 1 Evidence:** Profanity, slurs, insults (e.g., "idiot", "stupid", "kill").
* **Rank Low:** Pure noise or neutral words that don't justify toxicity.
)TPL";

inline constexpr std::string_view kTaskJigsawNonToxic = R"TPL(**TARGET CLASS: {prediction_label} (Safe/Neutral)**

**SIGNAL-TO-NOISE PRINCIPLE (Read Carefully):**
1. **Pure Signal (Best):** Concepts containing *only* relevant content words.
2. **Mixed Signal (Good/Okay):** Concepts containing strong relevant words mixed 
with some stopwords. 
   - *Do NOT rank these low just because of a few stopwords.* - If the key evidence
   (e.g., "kill", "love", "stocks") is present, it is still a GOOD concept.
   - However, if two concepts have the same signal, the one with fewer stopwords is 
   better.
3. **Pure Noise (Worst):** Concepts containing *only* stopwords (the, is, you) or 
punctuation. These explain nothing.

* **Rank 1 Evidence:** Specific content words showing normal conversation (e.g., 
"article", "edit", "agree", "discussion").
* **Rank Low:** Pure noise (only "the", "it", ".").
)TPL";

inline constexpr std::string_view kTaskMovie = R"TPL(**TARGET CLASS: {prediction_label}**

**SIGNAL-TO-NOISE PRINCIPLE (Read Carefully):**
1. **Pure Signal (Best):** Concepts containing *only* relevant content words.
2. **Mixed Signal (Good/Okay):** Concepts containing strong relevant words mixed 
with some stopwords. 
   - *Do NOT rank these low just because of a few stopwords.* - If the key evidence
   (e.g., "kill", "love", "stocks") is present, it is still a GOOD concept.
   - However, if two concepts have the same signal, the one with fewer stopwords is 
   better.
3. **Pure Noise (Worst):** Concepts containing *only* stopwords (the, is, you) or 
punctuation. These explain nothing.

* **Rank 1 Evidence:** Strong adjectives/verbs carrying **{predicted label meaning}**
sentiment.
* **Rank Low:** Plot details without emotion, or pure noise.
)TPL";

inline constexpr std::string_view kTaskAgNews = R"TPL(**TARGET CLASS: {prediction_label}**

**SIGNAL-TO-NOISE PRINCIPLE (Read Carefully):**
1. **Pure Signal (Best):** Concepts containing *only* relevant content words.
2. **Mixed Signal (Good/Okay):** Concepts containing strong relevant words mixed 
with some stopwords. 
   - *Do NOT rank these low just because of a few stopwords.* - If the key evidence
   (e.g., "kill", "love", "stocks") is present, it is still a GOOD concept.
   - However, if two concepts have the same signal, the one with fewer stopwords is 
   better.
3. **Pure Noise (Worst):** Concepts containing *only* stopwords (the, is, you) or 
punctuation. These explain nothing.

* **Rank 1 Evidence:** Keywords highly specific to the topic (Entities, technical 
terms, event names).
* **Rank Low:** Generic verbs or pure noise.
)TPL";

}  // namespace vqlc::judge

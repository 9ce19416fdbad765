#!/usr/bin/env python3
"""Writes the golden prompt-render corpus.

Each case pins the byte-exact render of one published prompt example.
The render text here is transcribed by hand, NOT produced by the
renderer under test; the golden test is only meaningful because these
bytes were written independently.
"""
import json
import os

ROOT = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "data", "golden")

AMAZING = "This movie is amazing!"
HORRIFIC = "Horrific movie, don't see it."
HORRIFIC_BARE = "Horrific movie, don't see it"  # several published layouts drop the period

CASES = [
    {
        "case_id": "sst2",
        "format_id": "sst2",
        "examples": [{"input": AMAZING, "label": "Positive"}],
        "test_input": HORRIFIC,
        "render": (
            "Review: This movie is amazing!\nSentiment: Positive"
            "\n\n"
            "Review: Horrific movie, don't see it.\nSentiment:"
        ),
    },
    {
        "case_id": "agnews",
        "format_id": "agnews",
        "examples": [
            {
                "input": "USATODAY.com - Retail sales bounced back a bit in July, and new claims for jobless benefits fell last week, the government said Thursday, indicating the economy is improving from a midsummer slump.",
                "label": "Business",
            }
        ],
        "test_input": "New hard-drive based devices feature color screens, support for WMP 10.",
        "render": (
            "Article: USATODAY.com - Retail sales bounced back a bit in July, and new claims for jobless benefits fell last week, the government said Thursday, indicating the economy is improving from a midsummer slump.\nAnswer: Business"
            "\n\n"
            "Article: New hard-drive based devices feature color screens, support for WMP 10.\nAnswer:"
        ),
    },
    {
        "case_id": "trec",
        "format_id": "trec",
        "examples": [
            {"input": "How did serfdom develop in and then leave Russia?", "label": "Description"}
        ],
        "test_input": "When was Ozzy Osbourne born?",
        "render": (
            "Classify the questions based on whether their answer type is a Number, Location, Person, Description, Entity, or Abbreviation."
            "\n\n"
            "Question: How did serfdom develop in and then leave Russia?\nAnswer Type: Description"
            "\n\n"
            "Question: When was Ozzy Osbourne born?\nAnswer Type:"
        ),
    },
    {
        "case_id": "dbpedia",
        "format_id": "dbpedia",
        "examples": [
            {
                "input": "Geoffrey D. Falksen (born July 31 1982) is an American steampunk writer.",
                "label": "Artist",
            }
        ],
        "test_input": "The Perrin River is a 1.3-mile-long (2.1 km) tidal river in the U.S. state of Virginia. It is a small inlet on the north shore of the York River near that river's mouth at Chesapeake Bay.",
        "render": (
            "Classify the documents based on whether they are about a Company, School, Artist, Athlete, Politician, Transportation, Building, Nature, Village, Animal, Plant, Album, Film, or Book."
            "\n\n"
            "Article: Geoffrey D. Falksen (born July 31 1982) is an American steampunk writer.\nAnswer: Artist"
            "\n\n"
            "Article: The Perrin River is a 1.3-mile-long (2.1 km) tidal river in the U.S. state of Virginia. It is a small inlet on the north shore of the York River near that river's mouth at Chesapeake Bay.\nAnswer:"
        ),
    },
    {
        "case_id": "cb",
        "format_id": "cb",
        "examples": [
            {
                "input": "But he ended up eating it himself. I was reluctant to kiss my mother, afraid that somehow her weakness and unhappiness would infect me. Naturally I didn't think for a minute that my life and spirit could stimulate her.\nquestion: her life and spirit could stimulate her mother. True, False, or Neither?",
                "label": "Neither",
            }
        ],
        "test_input": "Valence the void-brain, Valence the virtuous valet. Why couldn't the figger choose his own portion of titanic anatomy to shaft? Did he think he was helping?\nquestion: Valence was helping. True, False, or Neither?",
        "render": (
            "But he ended up eating it himself. I was reluctant to kiss my mother, afraid that somehow her weakness and unhappiness would infect me. Naturally I didn't think for a minute that my life and spirit could stimulate her.\nquestion: her life and spirit could stimulate her mother. True, False, or Neither?\nanswer: Neither"
            "\n\n"
            "Valence the void-brain, Valence the virtuous valet. Why couldn't the figger choose his own portion of titanic anatomy to shaft? Did he think he was helping?\nquestion: Valence was helping. True, False, or Neither?\nanswer:"
        ),
    },
    {
        "case_id": "rte",
        "format_id": "rte",
        "examples": [
            {
                "input": "Others argue that Mr. Sharon should have negotiated the Gaza pullout - both to obtain at least some written promises of better Palestinian behavior, and to provide Mr. Abbas with a prime prize to show his people that diplomacy, not violence, delivered Gaza.\nquestion: Mr. Abbas is a member of the Palestinian family. True or False?",
                "label": "False",
            }
        ],
        "test_input": "The program will include Falla's \"Night in the Gardens of Spain,\" Ravel's Piano Concerto in G, Berlioz's Overture to \"Beatrice and Benedict,\" and Roy Harris' Symphony No. 3.\nquestion: Beatrice and Benedict is an overture by Berlioz. True or False?",
        "render": (
            "Others argue that Mr. Sharon should have negotiated the Gaza pullout - both to obtain at least some written promises of better Palestinian behavior, and to provide Mr. Abbas with a prime prize to show his people that diplomacy, not violence, delivered Gaza.\nquestion: Mr. Abbas is a member of the Palestinian family. True or False?\nanswer: False"
            "\n\n"
            "The program will include Falla's \"Night in the Gardens of Spain,\" Ravel's Piano Concerto in G, Berlioz's Overture to \"Beatrice and Benedict,\" and Roy Harris' Symphony No. 3.\nquestion: Beatrice and Benedict is an overture by Berlioz. True or False?\nanswer:"
        ),
    },
    {
        "case_id": "lama",
        "format_id": "lama",
        "examples": [{"input": "Alexander Berntsson was born in", "label": "Sweden"}],
        "test_input": "Khalid Karami was born in",
        "render": (
            "Alexander Berntsson was born in Sweden"
            "\n\n"
            "Khalid Karami was born in"
        ),
    },
    {
        "case_id": "atis_airline",
        "format_id": "atis_airline",
        "examples": [
            {
                "input": "what are the two american airlines flights that leave from dallas to san francisco in the evening",
                "label": "american airlines",
            }
        ],
        "test_input": "list a flight on american airlines from toronto to san diego",
        "render": (
            "Sentence: what are the two american airlines flights that leave from dallas to san francisco in the evening\nAirline name: american airlines"
            "\n\n"
            "Sentence: list a flight on american airlines from toronto to san diego\nAirline name:"
        ),
    },
    {
        "case_id": "atis_depart_date",
        "format_id": "atis_depart_date",
        "examples": [
            {
                "input": "please list any flight available leaving oakland california tuesday arriving philadelphia wednesday",
                "label": "tuesday",
            }
        ],
        "test_input": "show me all all flights from pittsburgh to atlanta on wednesday which leave before noon and serve breakfast",
        "render": (
            "Sentence: please list any flight available leaving oakland california tuesday arriving philadelphia wednesday\nDepart date - Day name: tuesday"
            "\n\n"
            "Sentence: show me all all flights from pittsburgh to atlanta on wednesday which leave before noon and serve breakfast\nDepart date - Day name:"
        ),
    },
    {
        "case_id": "mit_genre",
        "format_id": "mit_genre",
        "examples": [
            {
                "input": "last to a famous series of animated movies about a big green ogre and his donkey and cat friends",
                "label": "animated",
            }
        ],
        "test_input": "what is a great comedy featuring the talents of steve carell as a loser looking for a friend",
        "render": (
            "Sentence: last to a famous series of animated movies about a big green ogre and his donkey and cat friends\nGenre: animated"
            "\n\n"
            "Sentence: what is a great comedy featuring the talents of steve carell as a loser looking for a friend\nGenre:"
        ),
    },
    {
        "case_id": "mit_director",
        "format_id": "mit_director",
        "examples": [
            {
                "input": "in 2005 director christopher nolan rebooted a legendary dc comics superhero with a darker grittier edge in which movie",
                "label": "christopher nolan",
            }
        ],
        "test_input": "what 1967 mike nichols film features dustin hoffman in romantic interludes with anne bancroft as mrs robinson",
        "render": (
            "Sentence: in 2005 director christopher nolan rebooted a legendary dc comics superhero with a darker grittier edge in which movie\nDirector: christopher nolan"
            "\n\n"
            "Sentence: what 1967 mike nichols film features dustin hoffman in romantic interludes with anne bancroft as mrs robinson\nDirector:"
        ),
    },
    {
        "case_id": "sst2_intro",
        "format_id": "sst2_intro",
        "examples": [
            {"input": "Subpar acting.", "label": "Negative"},
            {"input": "Beautiful film.", "label": "Positive"},
        ],
        "test_input": "Amazing.",
        "render": (
            "Input: Subpar acting. Sentiment: Negative"
            "\n"
            "Input: Beautiful film. Sentiment: Positive"
            "\n"
            "Input: Amazing. Sentiment:"
        ),
    },
    {
        "case_id": "sst2_fmt1",
        "format_id": "sst2_fmt1",
        "examples": [{"input": AMAZING, "label": "Positive"}],
        "test_input": HORRIFIC,
        "render": (
            "Review: This movie is amazing!\nAnswer: Positive"
            "\n"
            "Review: Horrific movie, don't see it.\nAnswer:"
        ),
    },
    {
        "case_id": "sst2_fmt2",
        "format_id": "sst2_fmt2",
        "examples": [{"input": AMAZING, "label": "good"}],
        "test_input": HORRIFIC,
        "render": (
            "Review: This movie is amazing!\nAnswer: good"
            "\n"
            "Review: Horrific movie, don't see it.\nAnswer:"
        ),
    },
    {
        "case_id": "sst2_fmt3",
        "format_id": "sst2_fmt3",
        "examples": [{"input": AMAZING, "label": "good"}],
        "test_input": HORRIFIC,
        "render": (
            "My review for last night's film: This movie is amazing! The critics agreed that this movie was good"
            "\n"
            "My review for last night's film: Horrific movie, don't see it. The critics agreed that this movie was"
        ),
    },
    {
        "case_id": "sst2_fmt4",
        "format_id": "sst2_fmt4",
        "examples": [{"input": AMAZING, "label": "positive"}],
        "test_input": HORRIFIC_BARE,
        "render": (
            "Here is what our critics think for this month's films."
            "\n"
            "One of our critics wrote \"This movie is amazing!\". Her sentiment towards the film was positive."
            "\n"
            "One of our critics wrote \"Horrific movie, don't see it\". Her sentiment towards the film was"
        ),
    },
    {
        "case_id": "sst2_fmt5",
        "format_id": "sst2_fmt5",
        "examples": [{"input": AMAZING, "label": "good"}],
        "test_input": HORRIFIC_BARE,
        "render": (
            "Critical reception [ edit ]"
            "\n"
            "In a contemporary review, Roger Ebert wrote \"This movie is amazing!\". Entertainment Weekly agreed, and the overall critical reception of the film was good."
            "\n"
            "In a contemporary review, Roger Ebert wrote \"Horrific movie, don't see it\". Entertainment Weekly agreed, and the overall critical reception of the film was"
        ),
    },
    {
        "case_id": "sst2_fmt6",
        "format_id": "sst2_fmt6",
        "examples": [{"input": AMAZING, "label": "Yes"}],
        "test_input": HORRIFIC,
        "render": (
            "Review: This movie is amazing!\nPositive Review? Yes"
            "\n"
            "Review: Horrific movie, don't see it.\nPositive Review?"
        ),
    },
    {
        # The published layout repeats the same review in the test slot.
        "case_id": "sst2_fmt7",
        "format_id": "sst2_fmt7",
        "examples": [{"input": AMAZING, "label": "Positive"}],
        "test_input": AMAZING,
        "render": (
            "Review: This movie is amazing!\nQuestion: Is the sentiment of the above review Positive or Negative?\nAnswer: Positive"
            "\n"
            "Review: This movie is amazing!\nQuestion: Is the sentiment of the above review Positive or Negative?\nAnswer:"
        ),
    },
    {
        "case_id": "sst2_fmt8",
        "format_id": "sst2_fmt8",
        "examples": [{"input": AMAZING, "label": "good"}],
        "test_input": AMAZING,
        "render": (
            "Review: This movie is amazing!\nQuestion: Did the author think that the movie was good or bad?\nAnswer: good"
            "\n"
            "Review: This movie is amazing!\nQuestion: Did the author think that the movie was good or bad?\nAnswer:"
        ),
    },
    {
        "case_id": "sst2_fmt9",
        "format_id": "sst2_fmt9",
        "examples": [{"input": AMAZING, "label": "good"}],
        "test_input": HORRIFIC_BARE,
        "render": (
            "Question: Did the author of the following tweet think that the movie was good or bad?\nTweet: This movie is amazing!\nAnswer: good"
            "\n"
            "Question: Did the author of the following tweet think that the movie was good or bad?\nTweet: Horrific movie, don't see it\nAnswer:"
        ),
    },
    {
        "case_id": "sst2_fmt10",
        "format_id": "sst2_fmt10",
        "examples": [{"input": AMAZING, "label": "good"}],
        "test_input": HORRIFIC,
        "render": (
            "This movie is amazing! My overall feeling was that the movie was good"
            "\n"
            "Horrific movie, don't see it. My overall feeling was that the movie was"
        ),
    },
    {
        "case_id": "sst2_fmt11",
        "format_id": "sst2_fmt11",
        "examples": [{"input": AMAZING, "label": "liked"}],
        "test_input": HORRIFIC,
        "render": (
            "This movie is amazing! I liked the movie."
            "\n"
            "Horrific movie, don't see it. I"
        ),
    },
    {
        "case_id": "sst2_fmt12",
        "format_id": "sst2_fmt12",
        "examples": [{"input": AMAZING, "label": "5"}],
        "test_input": HORRIFIC,
        "render": (
            "This movie is amazing! My friend asked me if I would give the movie 0 or 5 stars, I said 5"
            "\n"
            "Horrific movie, don't see it. My friend asked me if I would give the movie 0 or 5 stars, I said"
        ),
    },
    {
        "case_id": "sst2_fmt13",
        "format_id": "sst2_fmt13",
        "examples": [{"input": AMAZING, "label": "Positive"}],
        "test_input": HORRIFIC,
        "render": (
            "Input: This movie is amazing!\nSentiment: Positive"
            "\n"
            "Input: Horrific movie, don't see it.\nSentiment:"
        ),
    },
    {
        "case_id": "sst2_fmt14",
        "format_id": "sst2_fmt14",
        "examples": [{"input": AMAZING, "label": "True"}],
        "test_input": HORRIFIC,
        "render": (
            "Review: This movie is amazing!\nPositive: True"
            "\n"
            "Review: Horrific movie, don't see it.\nPositive:"
        ),
    },
    {
        "case_id": "sst2_fmt15",
        "format_id": "sst2_fmt15",
        "examples": [{"input": AMAZING, "label": "5"}],
        "test_input": HORRIFIC,
        "render": (
            "Review: This movie is amazing!\nStars: 5"
            "\n"
            "Review: Horrific movie, don't see it.\nStars:"
        ),
    },
]


def main():
    renders_dir = os.path.join(ROOT, "renders")
    os.makedirs(renders_dir, exist_ok=True)
    with open(os.path.join(ROOT, "cases.jsonl"), "w", encoding="utf-8") as f:
        for case in CASES:
            record = {k: case[k] for k in ("case_id", "format_id", "examples", "test_input")}
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
    for case in CASES:
        path = os.path.join(renders_dir, case["case_id"] + ".txt")
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(case["render"])  # no trailing newline: renders end at the answer cue
    print(f"wrote {len(CASES)} cases")


if __name__ == "__main__":
    main()

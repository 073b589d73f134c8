//! Proptest strategies for actions and agent turns.

use mobile_agent::action::{Action, Position, ScrollDirection};
use proptest::prelude::*;

const POSITION_WORDS: &[&str] = &["top", "bottom", "left", "right", "center", "centre", "middle", "and"];

fn arg_text() -> impl Strategy<Value = String> {
    "[A-Za-z0-9][A-Za-z0-9 ,.'!?:;&-]{0,24}[A-Za-z0-9.!?]|[A-Za-z0-9]"
}

fn description() -> impl Strategy<Value = String> {
    let word = "[a-z]{1,8}".prop_filter("not a position word", |w| !POSITION_WORDS.contains(&w.as_str()));
    (prop::collection::vec(word, 1..5), prop::collection::vec(any::<bool>(), 4)).prop_map(|(words, commas)| {
        let mut out = words[0].clone();
        for (i, w) in words.iter().enumerate().skip(1) {
            out.push_str(if commas[i - 1] { ", " } else { " " });
            out.push_str(w);
        }
        out
    })
}

fn positions() -> impl Strategy<Value = Vec<Position>> {
    prop::sample::subsequence(Position::ALL.to_vec(), 1..=2).prop_shuffle()
}

pub fn action() -> impl Strategy<Value = Action> {
    prop_oneof![
        arg_text().prop_map(|app| Action::OpenApp { app }),
        arg_text().prop_map(|text| Action::ClickText { text }),
        (description(), positions()).prop_map(|(description, positions)| Action::ClickIcon { description, positions }),
        prop_oneof![Just(String::new()), arg_text()].prop_map(|content| Action::TypeText { content }),
        prop_oneof![Just(ScrollDirection::Up), Just(ScrollDirection::Down)].prop_map(|direction| Action::Scroll { direction }),
        Just(Action::Back),
        Just(Action::Exit),
        Just(Action::Stop),
    ]
}

/// Three-section turns with random operations, arguments and a possibly
/// missing section.
pub fn near_miss_turn() -> impl Strategy<Value = String> {
    (
        "[ -~]{0,30}",
        prop::sample::select(vec!["Open App", "Click the text", "Click the icon", "Type", "Page up", "Back", "Stop", "Jump", ""]),
        "[ -~]{0,30}",
        0usize..4,
    )
        .prop_map(|(obs, verb, args, drop)| {
            let sections = [format!("Observation: {obs}"), "Thought: hm".to_string(), format!("Action: {verb} ({args})")];
            sections.iter().enumerate().filter(|(i, _)| *i != drop).map(|(_, s)| s.as_str()).collect::<Vec<_>>().join("\n")
        })
}

//! Bundled example task specifications and configurations.
//!
//! `restaurant` and `movie` follow the slot inventories of the released
//! restaurant and movie datasets; `showtimes` and `dining` are a small
//! two-task pair with a theatre-to-restaurant location reference.

use indexmap::IndexMap;

use crate::scenario::{
    Constraint, GoalReference, ReferenceRule, Scenario, ScenarioConfig, UserGoal, UserProfile,
};
use crate::task_spec::TaskSpec;

pub const RESTAURANT_SCHEMA: &str = include_str!("../data/restaurant.schema.json");
pub const RESTAURANT_DB: &str = include_str!("../data/restaurant.db.json");
pub const RESTAURANT_CONFIG: &str = include_str!("../data/restaurant.config.json");
pub const MOVIE_SCHEMA: &str = include_str!("../data/movie.schema.json");
pub const MOVIE_DB: &str = include_str!("../data/movie.db.json");
pub const MOVIE_RESTAURANT_CONFIG: &str = include_str!("../data/movie_restaurant.config.json");
pub const SHOWTIMES_SCHEMA: &str = include_str!("../data/showtimes.schema.json");
pub const SHOWTIMES_DB: &str = include_str!("../data/showtimes.db.json");
pub const DINING_SCHEMA: &str = include_str!("../data/dining.schema.json");
pub const DINING_DB: &str = include_str!("../data/dining.db.json");

pub fn restaurant_spec() -> TaskSpec {
    TaskSpec::load(RESTAURANT_SCHEMA, RESTAURANT_DB).expect("bundled restaurant spec is valid")
}

pub fn movie_spec() -> TaskSpec {
    TaskSpec::load(MOVIE_SCHEMA, MOVIE_DB).expect("bundled movie spec is valid")
}

pub fn showtimes_spec() -> TaskSpec {
    TaskSpec::load(SHOWTIMES_SCHEMA, SHOWTIMES_DB).expect("bundled showtimes spec is valid")
}

pub fn dining_spec() -> TaskSpec {
    TaskSpec::load(DINING_SCHEMA, DINING_DB).expect("bundled dining spec is valid")
}

/// Scenario configuration for the restaurant task, including distractor
/// values used for unsatisfiable goals.
pub fn restaurant_config() -> ScenarioConfig {
    serde_json::from_str(RESTAURANT_CONFIG).expect("bundled restaurant config is valid")
}

pub fn movie_restaurant_config() -> ScenarioConfig {
    serde_json::from_str(MOVIE_RESTAURANT_CONFIG).expect("bundled movie+restaurant config is valid")
}

/// The restaurant's date follows the movie's date.
pub fn movie_restaurant_references() -> Vec<ReferenceRule> {
    movie_restaurant_config().references
}

/// The dining location is "near the theatre" chosen for the showtime.
pub fn showtimes_dining_references() -> Vec<ReferenceRule> {
    vec![ReferenceRule {
        task: "dining".into(),
        slot: "location".into(),
        source_task: "showtimes".into(),
        source_slot: "location".into(),
        description: "near the theatre".into(),
    }]
}

/// A movie booking followed by dinner near the theatre, played by a
/// cooperative user.
pub fn two_task_scenario() -> Scenario {
    let movie = UserGoal {
        task: "showtimes".into(),
        intent: "book_movie".into(),
        constraints: vec![
            Constraint::fixed("name", "Inside Out"),
            Constraint::fixed("date", "tomorrow"),
            Constraint::fixed("num_tickets", "2"),
            Constraint::flexible("time", "evening"),
        ],
        requests: vec![],
        references: IndexMap::new(),
        unsatisfiable: false,
    };
    let mut references = IndexMap::new();
    references.insert(
        "location".to_string(),
        GoalReference {
            goal: 0,
            source_slot: "location".into(),
            description: "near the theatre".into(),
        },
    );
    let dinner = UserGoal {
        task: "dining".into(),
        intent: "reserve_restaurant".into(),
        constraints: vec![
            Constraint::fixed("meal", "dinner"),
            Constraint::fixed("location", "near the theatre"),
            Constraint::open("cuisine"),
            Constraint::fixed("price_range", "moderate"),
            Constraint::fixed("rating", "high"),
            Constraint::fixed("time", "after the movie"),
            Constraint::fixed("num_people", "2"),
        ],
        requests: vec![],
        references,
        unsatisfiable: false,
    };
    Scenario {
        profile: UserProfile {
            name: "cooperative".into(),
            p_multi_slot: 0.7,
            p_accept_flexible: 1.0,
            p_request_alts: 0.0,
            p_request_info: 0.0,
            max_goal_relaxations: 4,
        },
        goals: vec![movie, dinner],
        seed: 0,
    }
}

/// Speaker-tagged act sequence of the sample movie-then-dinner outline.
pub fn two_task_act_sequence() -> Vec<String> {
    [
        "S:GREETING",
        "U:INFORM",
        "S:AFFIRM REQUEST",
        "U:INFORM",
        "S:OFFER",
        "U:AFFIRM",
        "S:NOTIFY_SUCCESS",
        "U:INFORM",
        "S:REQUEST",
        "U:INFORM",
        "S:SELECT",
        "U:INFORM",
        "S:AFFIRM CONFIRM",
        "U:AFFIRM",
        "S:NOTIFY_SUCCESS",
        "U:THANK_YOU GOOD_BYE",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

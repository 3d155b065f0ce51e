//! Regenerates `fixtures/mock_llm.json`: a three-scene script with a shared
//! foreground and background, plus canned entity descriptions.

use std::path::Path;

use videostudio::script::backend::{FixtureReply, FixtureRule, MockFixture};

const SCRIPT: &str = "\
[Scene 1: prompt: a young man is kneading dough in a bright kitchen | foreground: young man | background: kitchen | camera: static, slow]
[Scene 2: prompt: the young man is cooking at the stove in the kitchen | foreground: young man | background: kitchen | camera: right, medium]
[Scene 3: prompt: the young man is walking the dog through a green park | foreground: young man, brown dog | background: park | camera: left, slow]";

const DESCRIPTIONS: [(&str, &str); 4] = [
    ("young man", "A slim young man in his twenties with short black hair, a white t-shirt, blue jeans and a flour-dusted apron, calm and focused."),
    ("brown dog", "A medium-sized brown dog with floppy ears, a shiny short coat, a red collar and a cheerful wagging tail."),
    ("kitchen", "A bright home kitchen with white tiled walls, wooden countertops, a steel stove and morning light from a side window."),
    ("park", "A green city park with a gravel path, tall oak trees, trimmed grass and a soft blue sky."),
];

fn rule(contains: &str, reply: FixtureReply) -> FixtureRule {
    FixtureRule { contains: contains.into(), reply }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rules = vec![
        rule("Video description:", FixtureReply::One(SCRIPT.into())),
        rule(
            "What are the aspects",
            FixtureReply::One(
                "Consider appearance, colour, shape, size, texture, clothing or materials, and the lighting it is seen in.".into(),
            ),
        ),
    ];
    for (name, text) in DESCRIPTIONS {
        rules.push(rule(&format!("describe the {name} in one detailed paragraph"), FixtureReply::One(text.into())));
    }
    rules.push(rule(
        "describe the",
        FixtureReply::Template { template: "A clearly visible subject. {last_user}".into() },
    ));
    let fixture = MockFixture { model: "mock".into(), rules, ..MockFixture::default() };
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mock_llm.json");
    std::fs::write(&path, serde_json::to_string_pretty(&fixture)? + "\n")?;
    println!("wrote {}", path.display());
    Ok(())
}

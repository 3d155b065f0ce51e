//! Stage one against the bundled chat fixture: script, common entities and
//! their descriptions.

use std::path::Path;

use videostudio::script::{
    default_examples, describe_entities, find_common_entities, generate_script, serialize_script, MockChatBackend,
    RetryPolicy,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mock_llm.json");
    let chat = MockChatBackend::load(&fixture)?;
    let run = generate_script("a young man bakes bread and walks his dog", &chat, &RetryPolicy::default(), &default_examples())?;
    println!("script after {} attempt(s):\n{}", run.attempts, serialize_script(&run.script));
    let records = find_common_entities(&run.script);
    for r in describe_entities(&records, &run.script.source_prompt, &chat)? {
        let shared = if r.occurrences.len() > 1 { "common" } else { "single" };
        println!("{:10} {:?} {shared} {:?}\n  {}", r.name, r.kind, r.occurrences, r.description.unwrap_or_default());
    }
    println!("{} chat calls", chat.calls());
    Ok(())
}

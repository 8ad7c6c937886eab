//! Byte-deterministic renderings of a task: the user prompt and the
//! chat-completions tool-schema array.

use serde_json::{json, Value};

use crate::taskgen::TaskInstance;

/// The exact prompt handed to the agent: instruction line naming the
/// target variable, one `Variable <name> = <value>` line per prompt
/// variable in generation order, and the closing line.
pub fn render_user_prompt(task: &TaskInstance) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "Using the tools at your disposal, use functions until you are able to give me the correct value of variable {}.\n",
        task.target_var
    ));
    out.push('\n');
    for (name, value) in &task.prompt_vars {
        out.push_str(&format!("Variable {name} = {value}\n"));
    }
    out.push('\n');
    out.push_str("You have all the information you need to get the correct result.");
    out
}

/// Tool-schema wire JSON: one strict function object per schema, with
/// integer parameters in schema input order.
pub fn render_tool_schemas(task: &TaskInstance) -> Value {
    let tools: Vec<Value> = task
        .schemas
        .iter()
        .map(|schema| {
            let mut properties = serde_json::Map::new();
            for input in &schema.inputs {
                properties.insert(input.name.clone(), json!({ "type": "integer" }));
            }
            let required: Vec<Value> = schema
                .inputs
                .iter()
                .map(|input| Value::String(input.name.clone()))
                .collect();
            json!({
                "type": "function",
                "function": {
                    "name": schema.fname,
                    "description": schema.description,
                    "strict": true,
                    "parameters": {
                        "type": "object",
                        "properties": properties,
                        "required": required,
                        "additionalProperties": false,
                    },
                },
            })
        })
        .collect();
    Value::Array(tools)
}

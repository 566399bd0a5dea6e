"""Reference texts used across the suite.

The layout, plans and prompts below are written out by hand; nothing here
is produced by the package.
"""

CANONICAL_HTML = (
    "<html>\n"
    "<body>\n"
    '<div  class="canvas" style="left:0px; top:0px; width:102px; height:150px"></div>\n'
    '<div  class="text" style="left:2px; top:113px; width:95px; height:10px"></div>\n'
    '<div  class="text" style="left:2px; top:124px; width:95px; height:9px"></div>\n'
    '<div  class="underlay" style="left:0px; top:111px; width:102px; height:24px"></div>\n'
    "</body>\n"
    "</html>"
)

CANONICAL_BOXES = [
    ("text", 2, 113, 95, 10),
    ("text", 2, 124, 95, 9),
    ("underlay", 0, 111, 102, 24),
]

EXAMPLE_PLAN = (
    "- Text 0 : Bottom center to ensure it dose not overlap above the waist of man and woman.\n"
    "- Text 1 : Under Text 0, aligned with Text 0.\n"
    "- Underlay 2 : Behind Text 0 and Text 1 to avoid overlapping humans as possible."
)

TEST_SAMPLE_PLAN = (
    "- Text 0: Bottom center, below the plush toy.\n"
    "- Text 1: Below text 0, aligned to the left.\n"
    "- Underlay 2: Behind text 2 for contrast."
)

PLAN_PROMPT = """Instruction
Please tell me the requirements where to place the ad elements.
Constraint
- Please aware the contents of this image.

Example 1
<image>
Element Type Constraint: text 0 | text 1 | underlay 2

Example Output 1
Placement Plan:
- Text 0 : Bottom center to ensure it dose not overlap above the waist of man and woman.
- Text 1 : Under Text 0, aligned with Text 0.
- Underlay 2 : Behind Text 0 and Text 1 to avoid overlapping humans as possible.

Test Sample
<image>
Element Type Constraint: text 0 | text 1 | underlay 2"""

LAYOUT_PROMPT = """Instruction: Please generate a layout based on the given information. You need to ensure that the generated layout looks realistic, with elements well aligned and avoiding unnecessary overlap.
Task Description: content-aware layout generation
Please place the following elements to avoid salient content, and underlay must be the background of text or logo.
Canvas Size: canvas width is 102px, canvas height is 150px

Example 1
<image>
Element Type Constraint: text 0 | text 1 | underlay 2
Placement Plan:
- Text 0 : Bottom center to ensure it dose not overlap above the waist of man and woman.
- Text 1 : Under Text 0, aligned with Text 0.
- Underlay 2 : Behind Text 0 and Text 1 to avoid overlapping humans as possible.

Example Output 1
<html>
<body>
<div  class="canvas" style="left:0px; top:0px; width:102px; height:150px"></div>
<div  class="text" style="left:2px; top:113px; width:95px; height:10px"></div>
<div  class="text" style="left:2px; top:124px; width:95px; height:9px"></div>
<div  class="underlay" style="left:0px; top:111px; width:102px; height:24px"></div>
</body>
</html>

Test Sample
<image>
Element Type Constraint: text 0 | text 1 | underlay 2
Placement Plan:
- Text 0: Bottom center, below the plush toy.
- Text 1: Below text 0, aligned to the left.
- Underlay 2: Behind text 2 for contrast."""

# Two-step plan answer for a logo, three texts and an underlay.
MICROPHONE_PLAN = """Two microphones are placed on a platform in the center of the image. Avoid overlapping the microphones and the platform.
- Logo 0 : Top left, avoiding the microphones.
- Text 1 : Top right, avoiding the microphones.
- Text 2 : Bottom left, near the base, avoiding the platform.
- Text 3 : Bottom right, near the base, avoiding the platform.
- Underlay 4 : Behind text 2 and text 3, not to overlap the microphones or platform."""

MICROPHONE_CONSTRAINT = "logo 0 | text 1 | text 2 | text 3 | underlay 4"

# One-step answer: prose, then HTML, then a trailing bullet plan.
ONE_STEP_ANSWER = """Below is the HTML layout with elements placed to avoid overlapping the microphones and their base.
<html>
<body>
<div  class="canvas" style="left:0px; top:0px; width:102px; height:150px"></div>
<div  class="logo" style="left:4px; top:4px; width:26px; height:12px"></div>
<div  class="text" style="left:4px; top:30px; width:30px; height:10px"></div>
<div  class="text" style="left:4px; top:42px; width:30px; height:10px"></div>
<div  class="text" style="left:4px; top:54px; width:30px; height:8px"></div>
<div  class="underlay" style="left:2px; top:28px; width:34px; height:36px"></div>
</body>
</html>
- Logo 0: Positioned at the top left to avoid the microphones.
- Text 1, 2, 3: Stacked vertically on the left side, avoiding the microphones.
- Underlay 4: Covers the area behind the text, not overlapping the microphones."""

JUDGE_FALLBACK_ANSWER = """Explanation:
The design shows a clear misuse of overlap and layering principles.

Alignment score: 6
Overlap score: 3.0
White Space score: 5.5"""

"""
Builds index.md from README.md and appends the exit code table of `roe-lab`.
"""

from pathlib import Path

import mkdocs_gen_files

from prefect_roe_lab.cli import ExitCode

readme_path = Path("README.md")
docs_index_path = Path("index.md")

with open(readme_path, "r") as readme:
    with mkdocs_gen_files.open(docs_index_path, "w") as generated_file:
        for line in readme:
            if line.startswith("Visit the full docs [here]("):
                continue
            generated_file.write(line)

        generated_file.write("\n## Exit codes\n\n| Code | Name |\n| --- | --- |\n")
        for code in ExitCode:
            generated_file.write(f"| {int(code)} | `{code.name}` |\n")

    mkdocs_gen_files.set_edit_path(Path(docs_index_path), readme_path)

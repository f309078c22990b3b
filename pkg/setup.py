from setuptools import find_packages, setup

with open("requirements.txt") as install_requires_file:
    install_requires = install_requires_file.read().strip().split("\n")

with open("requirements-dev.txt") as dev_requires_file:
    dev_requires = dev_requires_file.read().strip().split("\n")

with open("README.md") as readme_file:
    readme = readme_file.read()

with open("prefect_roe_lab/__init__.py") as init_file:
    version = next(
        line.split("=")[1].strip().strip('"')
        for line in init_file
        if line.startswith("__version__")
    )

setup(
    name="prefect-roe-lab",
    description=(
        "Finite-scale experiments on the rigidity of uniform Roe algebras, "
        "orchestrated with Prefect."
    ),
    license="Apache License 2.0",
    author="Prefect Technologies, Inc.",
    author_email="help@prefect.io",
    keywords="prefect, operator algebras, coarse geometry",
    url="https://github.com/PrefectHQ/prefect-roe-lab",
    long_description=readme,
    long_description_content_type="text/markdown",
    version=version,
    packages=find_packages(exclude=("tests", "docs")),
    python_requires=">=3.8",
    install_requires=install_requires,
    extras_require={"dev": dev_requires},
    entry_points={
        "console_scripts": [
            "roe-lab = prefect_roe_lab.cli:main",
        ],
        "prefect.collections": [
            "prefect_roe_lab = prefect_roe_lab",
        ],
    },
    classifiers=[
        "Natural Language :: English",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: Apache Software License",
        "Programming Language :: Python :: 3 :: Only",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
)

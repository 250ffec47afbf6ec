"""A setuptools based setup module.

See:
https://packaging.python.org/en/latest/distributing.html
https://github.com/pypa/sampleproject
"""

from io import open
from setuptools import find_packages
from setuptools import setup

import os

here = os.path.abspath(os.path.dirname(__file__))

# Get the long description from the README file
with open(os.path.join(here, "README.md"), encoding="utf-8") as f:
    long_description = f.read()

with open(os.path.join(here, "CHANGELOG.md"), encoding="utf-8") as f:
    long_description += "\n\n" + f.read()


VERSION = "0.1.0"


setup(
    name="polycouple",
    version=VERSION,
    description="Markovian couplings of Brownian motion together with its polynomial integrals.",
    long_description=long_description,
    license="MIT",
    long_description_content_type="text/markdown",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
    keywords="brownian motion coupling hypoelliptic diffusion monte carlo",
    packages=find_packages(exclude=["tests"]),
    include_package_data=True,
    python_requires=">=3.9",
    install_requires=["numpy", "scipy", "pandas", "pyramid", "structlog"],
    extras_require={
        "tests": ["pytest", "testfixtures", "freezegun"],
    },
    entry_points={"console_scripts": ["polycouple=polycouple.cli:main"]},
)

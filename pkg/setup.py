from setuptools import setup, find_packages

setup(
    name="kktscope",
    version="0.1.0",
    author="kktscope Contributors",
    description="KKT multiplier case analysis and weighted-scalarization min-max checks for nonlinear problems.",
    long_description=open("README.md", encoding="utf-8").read(),
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=("tests", "tests.*")),
    include_package_data=True,
    install_requires=[
        "typer",
        "rich",
        "numpy",
        "scipy",
        "pydantic>=2",
        "tomli; python_version < '3.11'",
    ],
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
    python_requires='>=3.9',
    entry_points={
        'console_scripts': [
            'kktscope=kktscope.cli:main',
        ],
    },
)
